#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "rewardevo/evolution/evolution.hpp"

namespace rewardevo::evolution {

namespace {

Json fitness_json(double f) { return std::isfinite(f) ? Json(f) : Json(nullptr); }

double fitness_from(const Json& j) { return j.is_null() ? eval::kInvalidFitness : j.get<double>(); }

}  // namespace

std::string_view status_key(Status s)
{
  switch (s) {
    case Status::Alive: return "alive";
    case Status::Eliminated: return "eliminated";
    case Status::Invalid: return "invalid";
  }
  return "unknown";
}

std::string format_fitness(double fitness)
{
  return std::isfinite(fitness) ? fmt::format("{:.6f}", fitness) : std::string("invalid");
}

std::optional<RewardAnswer> request_reward(llm::Provider& provider, llm::TemplateId id, const llm::Variables& vars,
                                           envs::TaskId task, int format_attempts, std::string* rejection)
{
  const auto prompt = llm::render_prompt(id, vars);
  const auto key = envs::task_key(task);
  const auto& schema = envs::task_schema(task);
  std::string feedback;
  for (int attempt = 1; attempt <= format_attempts; ++attempt) {
    const auto text = attempt == 1 ? prompt
                                   : prompt + "\n\n" + std::string(llm::format_reminder(id)) +
                                         "\nYour previous answer was rejected: " + feedback;
    const auto response = provider.complete(id, text, key).response_text;
    try {
      auto parsed = llm::parse_individual(response);
      auto program = rsl::parse(parsed.code);
      const auto missing = rsl::validate(program, schema);
      if (missing.empty()) {
        if (parsed.thought.empty()) {
          parsed.thought = "(no idea stated)";
        }
        return RewardAnswer{std::move(parsed.thought), std::move(program), attempt};
      }
      feedback = "it reads fields this task does not provide:";
      for (const auto& m : missing) {
        feedback += " " + m;
      }
    } catch (const llm::ResponseParseError& e) {
      feedback = e.what();
    } catch (const rsl::ParseError& e) {
      feedback = std::string("the program does not parse: ") + e.what();
    }
    spdlog::debug("{} answer for {} rejected: {}", llm::template_key(id), key, feedback);
  }
  if (rejection != nullptr) {
    *rejection = feedback;
  }
  return std::nullopt;
}

std::optional<RewardAnswer> adapt_reward(llm::Provider& provider, envs::TaskId source, std::string_view thought,
                                         std::string_view code, envs::TaskId target, std::string_view rationale,
                                         std::string_view strategy, int format_attempts, std::string* rejection)
{
  return request_reward(provider, llm::TemplateId::KtExecute,
                        {{"source_task", std::string(envs::task_key(source))},
                         {"source_thought", std::string(thought)},
                         {"source_code", std::string(code)},
                         {"target_description", llm::describe_task(envs::load_task_metadata(target))},
                         {"reflection", std::string(rationale)},
                         {"strategy", std::string(strategy)}},
                        target, format_attempts, rejection);
}

// ---- trace and individual ------------------------------------------------------

Json TraceEntry::to_json() const
{
  return Json{{"id", id},
              {"generation", generation},
              {"thought", thought},
              {"source", source},
              {"fitness", fitness_json(fitness)}};
}

TraceEntry TraceEntry::from_json(const Json& j)
{
  return TraceEntry{j.at("id").get<std::string>(), j.at("generation").get<int>(), j.at("thought").get<std::string>(),
                    j.at("source").get<std::string>(), fitness_from(j.at("fitness"))};
}

void Individual::apply(const eval::FitnessReport& report)
{
  fitness = report.fitness;
  per_instance_medians = report.per_instance_medians;
  failure_reason = report.failure_reason;
  policy_digest = report.policy_digest;
  budget_used = report.budget_used;
  if (report.invalid || !std::isfinite(report.fitness)) {
    fitness = eval::kInvalidFitness;
    status = Status::Invalid;
  }
}

TraceEntry Individual::trace_entry() const { return TraceEntry{id, generation, thought, program.source, fitness}; }

Json Individual::to_json() const
{
  Json ancestors = Json::array();
  for (const auto& a : ancestry) {
    ancestors.push_back(a.to_json());
  }
  return Json{{"id", id},
              {"task", envs::task_key(task)},
              {"generation", generation},
              {"status", status_key(status)},
              {"thought", thought},
              {"source", program.source},
              {"content_hash", program.content_hash},
              {"fitness", fitness_json(fitness)},
              {"per_instance_medians", per_instance_medians},
              {"failure_reason", failure_reason},
              {"policy_digest", policy_digest},
              {"budget_used", budget_used},
              {"lineage",
               {{"operator", operator_key(lineage.op)},
                {"parents", lineage.parents},
                {"references", lineage.references},
                {"reflection", lineage.reflection},
                {"attempts", lineage.attempts}}},
              {"ancestry", ancestors}};
}

Individual Individual::from_json(const Json& j)
{
  try {
    Individual ind;
    ind.id = j.at("id").get<std::string>();
    ind.task = envs::task_from_key(j.at("task").get<std::string>());
    ind.generation = j.at("generation").get<int>();
    const auto status = j.at("status").get<std::string>();
    ind.status = status == "alive" ? Status::Alive : status == "eliminated" ? Status::Eliminated : Status::Invalid;
    ind.thought = j.at("thought").get<std::string>();
    ind.program = rsl::parse(j.at("source").get<std::string>());
    ind.fitness = fitness_from(j.at("fitness"));
    ind.per_instance_medians = j.at("per_instance_medians").get<std::vector<double>>();
    ind.failure_reason = j.at("failure_reason").get<std::string>();
    ind.policy_digest = j.at("policy_digest").get<std::string>();
    ind.budget_used = j.at("budget_used").get<long>();
    const auto& l = j.at("lineage");
    ind.lineage.op = operator_from_key(l.at("operator").get<std::string>());
    ind.lineage.parents = l.at("parents").get<std::vector<std::string>>();
    ind.lineage.references = l.at("references").get<std::vector<std::string>>();
    ind.lineage.reflection = l.at("reflection").get<std::string>();
    ind.lineage.attempts = l.at("attempts").get<int>();
    for (const auto& a : j.at("ancestry")) {
      ind.ancestry.push_back(TraceEntry::from_json(a));
    }
    return ind;
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed individual record: ") + e.what());
  } catch (const rsl::ParseError& e) {
    throw std::runtime_error(std::string("individual record holds an unparsable program: ") + e.what());
  }
}

bool ranks_before(const Individual& a, const Individual& b)
{
  if (a.fitness != b.fitness) {
    return a.fitness < b.fitness;
  }
  if (a.generation != b.generation) {
    return a.generation < b.generation;
  }
  return a.id < b.id;
}

// ---- niche ---------------------------------------------------------------------

const Individual& Niche::best() const
{
  if (population.empty()) {
    throw std::logic_error("niche " + std::string(envs::task_key(task)) + " is empty");
  }
  return *std::min_element(population.begin(), population.end(), ranks_before);
}

const Individual& Niche::worst() const
{
  if (population.empty()) {
    throw std::logic_error("niche " + std::string(envs::task_key(task)) + " is empty");
  }
  return *std::max_element(population.begin(), population.end(), ranks_before);
}

void Niche::sort() { std::sort(population.begin(), population.end(), ranks_before); }

void Niche::note_best(const Individual& candidate)
{
  if (candidate.valid() && (!best_so_far || ranks_before(candidate, *best_so_far))) {
    best_so_far = candidate;
    best_so_far->status = Status::Alive;
  }
}

Json Niche::to_json() const
{
  Json pop = Json::array();
  for (const auto& i : population) {
    pop.push_back(i.to_json());
  }
  return Json{{"task", envs::task_key(task)},
              {"metadata", metadata.to_json()},
              {"init_fallback", init_fallback},
              {"population", pop},
              {"best_so_far", best_so_far ? best_so_far->to_json() : Json(nullptr)}};
}

Niche Niche::from_json(const Json& j)
{
  Niche n;
  n.task = envs::task_from_key(j.at("task").get<std::string>());
  n.metadata = envs::Metadata::from_json(j.at("metadata"));
  n.init_fallback = j.at("init_fallback").get<bool>();
  for (const auto& i : j.at("population")) {
    n.population.push_back(Individual::from_json(i));
  }
  if (!j.at("best_so_far").is_null()) {
    n.best_so_far = Individual::from_json(j.at("best_so_far"));
  }
  return n;
}

// ---- archive -------------------------------------------------------------------

void Archive::add(Individual individual)
{
  individual.status = Status::Eliminated;
  entries_.push_back(std::move(individual));
  while (entries_.size() > cap_) {
    entries_.pop_front();
  }
}

void Archive::set_summary(std::string text, int generation)
{
  summary_ = std::move(text);
  summary_generation_ = generation;
}

Json Archive::to_json() const
{
  Json entries = Json::array();
  for (const auto& e : entries_) {
    entries.push_back(e.to_json());
  }
  return Json{{"cap", cap_},
              {"entries", entries},
              {"summary", summary_},
              {"summary_generation", summary_generation_ ? Json(*summary_generation_) : Json(nullptr)}};
}

Archive Archive::from_json(const Json& j)
{
  Archive a(j.at("cap").get<std::size_t>());
  for (const auto& e : j.at("entries")) {
    a.entries_.push_back(Individual::from_json(e));
  }
  a.summary_ = j.at("summary").get<std::string>();
  if (!j.at("summary_generation").is_null()) {
    a.summary_generation_ = j.at("summary_generation").get<int>();
  }
  return a;
}

// ---- transfer records -----------------------------------------------------------

Json TransferRecord::to_json() const
{
  return Json{{"generation", generation},
              {"source_task", envs::task_key(source)},
              {"target_task", envs::task_key(target)},
              {"reflection", reflection},
              {"strategy", strategy},
              {"transplant_id", transplant_id},
              {"replaced_id", replaced_id},
              {"transplant_fitness", fitness_json(transplant_fitness)},
              {"replaced_fitness", fitness_json(replaced_fitness)},
              {"applied", applied},
              {"failure", failure}};
}

TransferRecord TransferRecord::from_json(const Json& j)
{
  TransferRecord r;
  r.generation = j.at("generation").get<int>();
  r.source = envs::task_from_key(j.at("source_task").get<std::string>());
  r.target = envs::task_from_key(j.at("target_task").get<std::string>());
  r.reflection = j.at("reflection").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.transplant_id = j.at("transplant_id").get<std::string>();
  r.replaced_id = j.at("replaced_id").get<std::string>();
  r.transplant_fitness = fitness_from(j.at("transplant_fitness"));
  r.replaced_fitness = fitness_from(j.at("replaced_fitness"));
  r.applied = j.at("applied").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  return r;
}

// ---- selection -----------------------------------------------------------------

std::vector<double> selection_probabilities(std::size_t pool, std::size_t nominal)
{
  std::vector<double> w(pool);
  for (std::size_t r = 0; r < pool; ++r) {
    w[r] = 1.0 / static_cast<double>(r + nominal);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) {
    x /= total;
  }
  return w;
}

std::vector<std::size_t> draw_survivors(std::size_t pool, std::size_t n, std::size_t nominal, Rng& rng)
{
  std::vector<std::size_t> remaining(pool);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  while (chosen.size() < n && !remaining.empty()) {
    double total = 0.0;
    for (auto r : remaining) {
      total += 1.0 / static_cast<double>(r + nominal);
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = remaining.size() - 1;  // guards against rounding at the top end
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      acc += 1.0 / static_cast<double>(remaining[i] + nominal);
      if (u < acc) {
        pick = i;
        break;
      }
    }
    chosen.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return chosen;
}

std::vector<std::size_t> worst_instances(std::span<const double> medians, std::size_t k)
{
  std::vector<std::size_t> idx(medians.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return medians[a] > medians[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

// ---- fitness services ------------------------------------------------------------

SchedulerFitness::SchedulerFitness(std::shared_ptr<const problems::ProblemSuite> suite, eval::EvalBudget budget,
                                   std::uint64_t seed, int workers, std::optional<std::filesystem::path> cache_dir)
    : suite_(std::move(suite)),
      budget_(budget),
      seed_(seed),
      cache_(cache_dir ? std::make_unique<eval::FitnessCache>(*cache_dir) : std::make_unique<eval::FitnessCache>()),
      scheduler_(eval::resolve_worker_count(workers), cache_.get())
{
}

std::vector<eval::FitnessReport> SchedulerFitness::evaluate(const std::vector<Candidate>& batch)
{
  std::vector<eval::EvalJob> jobs;
  jobs.reserve(batch.size());
  for (const auto& c : batch) {
    jobs.push_back(eval::EvalJob{*c.program, envs::make_task(c.task), suite_, budget_, seed_});
  }
  auto reports = scheduler_.run(jobs);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].infrastructure_failure) {
      throw EvaluationError("evaluation of a " + std::string(envs::task_key(batch[i].task)) +
                            " candidate failed twice: " + reports[i].failure_reason);
    }
  }
  return reports;
}

std::vector<eval::FitnessReport> FunctionFitness::evaluate(const std::vector<Candidate>& batch)
{
  std::vector<eval::FitnessReport> out;
  out.reserve(batch.size());
  for (const auto& c : batch) {
    ++calls_;
    out.push_back(fn_(c.task, *c.program));
  }
  return out;
}

// ---- metadata ------------------------------------------------------------------

envs::Metadata build_metadata(envs::TaskId task, llm::Provider* provider, int format_attempts)
{
  const auto& fixture = envs::load_task_metadata(task);
  if (provider == nullptr) {
    return fixture;
  }
  std::string listing;
  for (const auto& [name, info] : fixture.c_code) {
    listing += "- " + name + " (" + info.type + "): " + info.description + "\n";
  }
  const auto prompt = llm::render_prompt(llm::TemplateId::MetaSummarize,
                                         {{"task_name", std::string(envs::task_key(task))},
                                          {"algorithm_text", fixture.c_alg},
                                          {"field_listing", listing}});
  const auto key = std::string(envs::task_key(task));
  for (int attempt = 1; attempt <= format_attempts; ++attempt) {
    const auto text = attempt == 1 ? prompt
                                   : prompt + "\n\n" + std::string(llm::format_reminder(llm::TemplateId::MetaSummarize));
    std::string response;
    try {
      response = provider->complete(llm::TemplateId::MetaSummarize, text, key).response_text;
    } catch (const llm::ProviderError& e) {
      spdlog::warn("metadata summary for {} failed ({}); using the bundled fixture", key, e.what());
      return fixture;
    }
    try {
      auto meta = llm::parse_metadata(response, key);
      std::string missing;
      for (const auto& [name, _] : envs::task_schema(task)) {
        if (!meta.c_code.contains(name)) {
          missing += (missing.empty() ? "" : ", ") + name;
        }
      }
      if (!missing.empty()) {
        spdlog::warn("metadata summary for {} omits schema fields ({}); using the bundled fixture", key, missing);
        return fixture;
      }
      return meta;
    } catch (const llm::ResponseParseError& e) {
      spdlog::warn("metadata summary for {} is malformed (attempt {}): {}", key, attempt, e.what());
    }
  }
  spdlog::warn("metadata summary for {} never parsed; using the bundled fixture", key);
  return fixture;
}

}  // namespace rewardevo::evolution
