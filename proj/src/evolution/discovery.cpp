#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "rewardevo/evolution/evolution.hpp"

namespace rewardevo::evolution {

namespace fs = std::filesystem;
using llm::TemplateId;

namespace {

constexpr std::string_view kNoHistory = "No earlier versions: this reward has no recorded history yet.";
constexpr std::string_view kNoArchive = "No archive yet: no reward has been retired so far.";
constexpr std::string_view kNoNotes = "No notes yet.";
constexpr std::string_view kNoTransfers = "No transfers yet.";
constexpr const char* kLogFiles[] = {"exchanges.jsonl", "archive.jsonl", "transfers.jsonl", "report.csv"};

std::string one_line(std::string_view text)
{
  std::string out;
  for (char c : text) {
    out.push_back(c == '\n' || c == '\r' ? ' ' : c);
  }
  return out;
}

std::string program_block(const Individual& ind)
{
  return "Idea:\n" + ind.thought + "\nProgram:\n```rsl\n" + ind.program.source + "\n```";
}

std::string expert_thought(envs::TaskId task)
{
  std::string out;
  std::istringstream in(envs::handcrafted_reward(task).source);
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("# ")) {
      out += (out.empty() ? "" : " ") + line.substr(2);
    }
  }
  return out.empty() ? "Expert reward of the original method." : "Expert reward of the original method. " + out;
}

std::uintmax_t file_size_or_zero(const fs::path& p)
{
  std::error_code ec;
  const auto n = fs::file_size(p, ec);
  return ec ? 0 : n;
}

}  // namespace

std::unique_ptr<SchedulerFitness> make_scheduler_fitness(const RunConfig& config,
                                                         std::optional<fs::path> cache_dir)
{
  auto suite = std::make_shared<const problems::ProblemSuite>(problems::make_suite(config.dimension, config.suite_seed));
  return std::make_unique<SchedulerFitness>(std::move(suite), config.budget(), derive_seed(config.seed, "fitness"),
                                            config.workers, std::move(cache_dir));
}

Discovery::Discovery(RunConfig config, llm::Provider& provider, FitnessService& fitness,
                     std::optional<fs::path> run_dir)
    : config_(std::move(config)),
      run_dir_(std::move(run_dir)),
      provider_(&provider),
      fitness_(fitness),
      archive_(static_cast<std::size_t>(config_.archive_cap))
{
  config_.validate();
  if (run_dir_) {
    recorder_ = std::make_unique<llm::RecordingProvider>(provider, *run_dir_ / "exchanges.jsonl");
    provider_ = recorder_.get();
  }
}

std::uint64_t Discovery::stream(std::string_view tag, int generation, std::uint64_t index) const
{
  return derive_seed(derive_seed(derive_seed(config_.seed, tag), static_cast<std::uint64_t>(generation)), index);
}

// ---- LLM round trips -------------------------------------------------------------

std::optional<Discovery::Answer> Discovery::ask(TemplateId id, const llm::Variables& vars, envs::TaskId task)
{
  std::string rejection;
  auto answer = request_reward(*provider_, id, vars, task, config_.format_attempts, &rejection);
  if (!answer) {
    spdlog::warn("{} for {}: no usable answer after {} prompt(s); slot skipped ({})", llm::template_key(id),
                 envs::task_key(task), config_.format_attempts, rejection);
  }
  return answer;
}

std::string Discovery::reflect(TemplateId id, const llm::Variables& vars, std::string_view task)
{
  const auto prompt = llm::render_prompt(id, vars);
  for (int attempt = 1; attempt <= config_.format_attempts; ++attempt) {
    const auto text = attempt == 1 ? prompt : prompt + "\n\n" + std::string(llm::format_reminder(id));
    auto response = provider_->complete(id, text, task).response_text;
    auto out = id == TemplateId::M3Reflect ? llm::parse_summary(response) : response;
    if (out.find_first_not_of(" \t\r\n") != std::string::npos) {
      return out;
    }
  }
  return "(no reflection available)";
}

Individual Discovery::make_individual(envs::TaskId task, Answer answer, Lineage lineage, int generation)
{
  Individual ind;
  ind.id = fmt::format("ind-{:05d}", next_id_++);
  ind.task = task;
  ind.thought = std::move(answer.thought);
  ind.program = std::move(answer.program);
  ind.generation = generation;
  lineage.attempts = answer.attempts;
  ind.lineage = std::move(lineage);
  return ind;
}

// ---- initialization --------------------------------------------------------------

Discovery::InitOutcome Discovery::populate(std::vector<Niche>& niches)
{
  const int n_target = config_.niche_size;
  const int max_attempts = config_.effective_init_attempts();
  InitOutcome out;
  out.attempts.assign(niches.size(), 0);

  // Anchors first, in one batch.
  std::vector<Individual> anchors;
  for (auto& niche : niches) {
    Lineage l;
    l.op = OperatorTag::Expert;
    anchors.push_back(make_individual(niche.task, Answer{expert_thought(niche.task), envs::handcrafted_reward(niche.task), 1},
                                      l, 0));
  }
  {
    std::vector<Candidate> batch;
    for (const auto& a : anchors) {
      batch.push_back({a.task, &a.program});
    }
    const auto reports = fitness_.evaluate(batch);
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      anchors[k].apply(reports[k]);
      if (!anchors[k].valid()) {
        throw EvaluationError("expert reward of " + std::string(envs::task_key(anchors[k].task)) +
                                 " failed evaluation: " + anchors[k].failure_reason);
      }
      niches[k].population.push_back(anchors[k]);
      out.born.push_back(anchors[k]);
    }
  }

  // Rounds: every open niche asks for one candidate, then the round is evaluated together.
  std::vector<std::vector<Individual>> rejected(niches.size());
  auto open = [&](std::size_t k) {
    return static_cast<int>(niches[k].population.size()) < n_target && out.attempts[k] < max_attempts;
  };
  while (true) {
    std::vector<std::pair<std::size_t, Individual>> round;
    bool any_open = false;
    for (std::size_t k = 0; k < niches.size(); ++k) {
      if (!open(k)) {
        continue;
      }
      any_open = true;
      ++out.attempts[k];
      auto& niche = niches[k];
      std::string prior;
      for (std::size_t i = 0; i < niche.population.size(); ++i) {
        const auto& p = niche.population[i];
        prior += fmt::format("{}. score {}{}: {}\n", i + 1, format_fitness(p.fitness),
                             i == 0 ? " (original expert reward)" : "", one_line(p.thought));
      }
      prior.pop_back();
      auto answer = ask(TemplateId::Init,
                        {{"task_description", llm::describe_task(niche.metadata)},
                         {"prior_count", std::to_string(niche.population.size())},
                         {"prior_individuals", prior},
                         {"difference_rate", std::to_string(config_.difference_rate)}},
                        niche.task);
      if (!answer) {
        continue;
      }
      Lineage l;
      l.op = OperatorTag::Init;
      l.references = {niche.population.front().id};
      round.emplace_back(k, make_individual(niche.task, std::move(*answer), l, 0));
    }
    if (!any_open) {
      break;
    }
    std::vector<Candidate> batch;
    for (const auto& [k, ind] : round) {
      batch.push_back({ind.task, &ind.program});
    }
    const auto reports = batch.empty() ? std::vector<eval::FitnessReport>{} : fitness_.evaluate(batch);
    for (std::size_t i = 0; i < round.size(); ++i) {
      auto& [k, ind] = round[i];
      ind.apply(reports[i]);
      // Strictly better than the expert anchor, which stays at the front until sorting.
      if (ind.valid() && ind.fitness < niches[k].population.front().fitness) {
        niches[k].population.push_back(ind);
      } else if (ind.valid()) {
        rejected[k].push_back(ind);
      } else {
        invalid_.push_back(ind);
      }
      out.born.push_back(ind);
    }
  }

  for (std::size_t k = 0; k < niches.size(); ++k) {
    auto& niche = niches[k];
    auto& rej = rejected[k];
    std::sort(rej.begin(), rej.end(), ranks_before);
    std::size_t used = 0;
    if (static_cast<int>(niche.population.size()) < n_target) {
      niche.init_fallback = true;
      while (static_cast<int>(niche.population.size()) < n_target && used < rej.size()) {
        niche.population.push_back(rej[used++]);
      }
      spdlog::warn("{}: initialization ran out of attempts; {} slot(s) filled from rejected candidates{}",
                   envs::task_key(niche.task), used,
                   static_cast<int>(niche.population.size()) < n_target ? ", niche left short" : "");
    }
    for (std::size_t i = used; i < rej.size(); ++i) {
      archive_.add(rej[i]);
      log_archive(rej[i]);
    }
    niche.sort();
    for (const auto& m : niche.population) {
      niche.note_best(m);
    }
  }
  return out;
}

void Discovery::initialize()
{
  if (initialized()) {
    throw std::logic_error("discovery already initialized");
  }
  if (run_dir_) {
    fs::create_directories(*run_dir_ / "snapshots");
    for (const char* name : kLogFiles) {
      write_text_file(*run_dir_ / name, "");
    }
    write_text_file(*run_dir_ / "config.json", dump_json(config_.to_json()));
    write_text_file(*run_dir_ / "report.csv", "generation,task,best_fitness,mean_fitness,invalid_count,kt_count\n");
  }
  niches_.clear();
  for (auto task : config_.tasks) {
    Niche n;
    n.task = task;
    n.metadata = build_metadata(task, config_.online_metadata ? provider_ : nullptr, config_.format_attempts);
    niches_.push_back(std::move(n));
  }
  const auto outcome = populate(niches_);

  generation_ = 0;
  for (std::size_t k = 0; k < niches_.size(); ++k) {
    GenerationStats st;
    st.generation = 0;
    st.task = niches_[k].task;
    for (const auto& b : outcome.born) {
      if (b.task == niches_[k].task && b.lineage.op == OperatorTag::Init) {
        ++st.offspring;
        st.invalid += b.valid() ? 0 : 1;
      }
    }
    st.skipped = outcome.attempts[k] - st.offspring;
    stats_.push_back(st);
  }
  write_generation(0, outcome.born);
  write_stats(0);
  write_snapshot();
}

Niche Discovery::initialize_niche(envs::TaskId task, envs::Metadata metadata)
{
  std::vector<Niche> niches(1);
  niches[0].task = task;
  niches[0].metadata = std::move(metadata);
  populate(niches);
  return std::move(niches[0]);
}

// ---- reproduction ----------------------------------------------------------------

const std::string& Discovery::archive_summary(int generation)
{
  static const std::string kEmpty(kNoArchive);
  if (archive_.empty()) {
    return kEmpty;
  }
  if (archive_.summary_generation() == generation) {
    return archive_.summary();
  }
  std::vector<const Individual*> ranked;
  for (const auto& e : archive_.entries()) {
    ranked.push_back(&e);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](auto* a, auto* b) { return ranks_before(*a, *b); });
  ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(config_.archive_prompt_entries)));
  std::string listing;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    listing += fmt::format("No.{} (task {}, score {})\n{}\n\n", i + 1, envs::task_key(ranked[i]->task),
                           format_fitness(ranked[i]->fitness), program_block(*ranked[i]));
  }
  std::string tasks;
  for (const auto& n : niches_) {
    tasks += (tasks.empty() ? "" : "\n\n") + llm::describe_task(n.metadata);
  }
  auto summary = reflect(TemplateId::M3Reflect,
                         {{"task_description", tasks},
                          {"archive_count", std::to_string(archive_.entries().size())},
                          {"archive_individuals", listing},
                          {"previous_summary", archive_.summary().empty() ? std::string(kNoNotes) : archive_.summary()}},
                         {});
  archive_.set_summary(std::move(summary), generation);
  return archive_.summary();
}

std::optional<Discovery::Pending> Discovery::offspring(std::size_t k, std::size_t p, OperatorTag op, int generation,
                                                       const Individual& global_best)
{
  const auto& niche = niches_[k];
  const auto& parent = niche.population[p];
  const auto task_desc = llm::describe_task(niche.metadata);
  const auto task = niche.task;
  const auto& suite = fitness_.suite();
  Lineage lineage;
  lineage.op = config_.replaced_by_m0.contains(op) ? OperatorTag::M0Simple : op;
  lineage.parents = {parent.id};
  std::optional<Answer> answer;

  switch (lineage.op) {
    case OperatorTag::M0Simple:
      answer = ask(TemplateId::M0Simple,
                   {{"task_description", task_desc}, {"thought", parent.thought}, {"code", parent.program.source}}, task);
      break;
    case OperatorTag::M1: {
      std::string characteristics;
      std::string performance;
      for (auto i : worst_instances(parent.per_instance_medians, static_cast<std::size_t>(config_.failure_cases))) {
        const auto& inst = suite.test_instances.at(i);
        characteristics += "- " + inst.name() + ": " + std::string(problems::function_characteristics(inst.function_id())) + "\n";
        performance += "- " + inst.name() + ": " + format_fitness(parent.per_instance_medians[i]) + "\n";
      }
      const auto reflection = reflect(TemplateId::M1Reflect,
                                      {{"task_description", task_desc},
                                       {"thought", parent.thought},
                                       {"code", parent.program.source},
                                       {"failure_characteristics", characteristics},
                                       {"failure_performance", performance}},
                                      envs::task_key(task));
      lineage.reflection = reflection;
      answer = ask(TemplateId::M1Mutate,
                   {{"task_description", task_desc}, {"code", parent.program.source}, {"reflection", reflection}}, task);
      break;
    }
    case OperatorTag::M2: {
      std::string trace;
      for (std::size_t i = 0; i < parent.ancestry.size(); ++i) {
        const auto& a = parent.ancestry[i];
        trace += fmt::format("Version {} ({}, score {})\nIdea:\n{}\nProgram:\n```rsl\n{}\n```\n\n", i + 1, a.id,
                             format_fitness(a.fitness), a.thought, a.source);
      }
      std::string detail;
      for (std::size_t i = 0; i < parent.per_instance_medians.size() && i < suite.test_instances.size(); ++i) {
        detail += (detail.empty() ? "" : ", ") + suite.test_instances[i].name() + " " +
                  format_fitness(parent.per_instance_medians[i]);
      }
      answer = ask(TemplateId::M2,
                   {{"task_description", task_desc},
                    {"history_trace", trace.empty() ? std::string(kNoHistory) : trace},
                    {"current_fitness", format_fitness(parent.fitness)},
                    {"fitness_detail", detail.empty() ? std::string("not available") : detail},
                    {"current_thought", parent.thought},
                    {"current_code", parent.program.source}},
                   task);
      break;
    }
    case OperatorTag::M3: {
      const auto& summary = archive_summary(generation);
      answer = ask(TemplateId::M3Mutate,
                   {{"task_description", task_desc},
                    {"archive_count", std::to_string(archive_.entries().size())},
                    {"summary", summary},
                    {"thought", parent.thought},
                    {"code", parent.program.source}},
                   task);
      break;
    }
    case OperatorTag::C1: {
      const auto& best = niche.best();
      lineage.references = {best.id, global_best.id};
      answer = ask(TemplateId::C1,
                   {{"task_description", task_desc},
                    {"current_fitness", format_fitness(parent.fitness)},
                    {"current_thought", parent.thought},
                    {"current_code", parent.program.source},
                    {"niche_best_fitness", format_fitness(best.fitness)},
                    {"niche_best_thought", best.thought},
                    {"niche_best_code", best.program.source},
                    {"global_best_fitness", format_fitness(global_best.fitness)},
                    {"global_best_task", std::string(envs::task_key(global_best.task))},
                    {"global_best_thought", global_best.thought},
                    {"global_best_code", global_best.program.source}},
                   task);
      break;
    }
    case OperatorTag::C2: {
      if (niches_.size() < 2) {
        return std::nullopt;
      }
      Rng rng(stream("c2", generation, k * 1000 + p));
      auto other = static_cast<std::size_t>(rng.below(niches_.size() - 1));
      if (other >= k) {
        ++other;
      }
      const auto& partner = niches_[other].best();
      lineage.references = {partner.id};
      answer = ask(TemplateId::C2,
                   {{"task_description", task_desc},
                    {"base_thought", parent.thought},
                    {"base_code", parent.program.source},
                    {"partner_task", std::string(envs::task_key(partner.task))},
                    {"partner_thought", partner.thought},
                    {"partner_code", partner.program.source}},
                   task);
      break;
    }
    default:
      throw std::logic_error("not a reproduction operator: " + std::string(operator_key(op)));
  }
  if (!answer) {
    return std::nullopt;
  }
  auto child = make_individual(task, std::move(*answer), std::move(lineage), generation);
  child.ancestry = parent.ancestry;
  child.ancestry.push_back(parent.trace_entry());
  const auto keep = static_cast<std::size_t>(config_.history_length);
  if (child.ancestry.size() > keep) {
    child.ancestry.erase(child.ancestry.begin(), child.ancestry.end() - static_cast<std::ptrdiff_t>(keep));
  }
  return Pending{std::move(child), k};
}

std::vector<Individual> Discovery::select_survivors(std::vector<Individual> pool, std::size_t n, Rng& rng,
                                                    std::vector<Individual>* eliminated) const
{
  std::erase_if(pool, [](const Individual& i) { return !i.valid(); });
  std::sort(pool.begin(), pool.end(), ranks_before);
  if (pool.size() <= n) {
    if (pool.size() < n) {
      spdlog::warn("selection pool of {} is smaller than the niche size {}; all survive", pool.size(), n);
    }
    return pool;
  }
  const std::size_t nominal = 6 * n;
  auto picks = draw_survivors(pool.size(), n, std::max(nominal, pool.size()), rng);
  std::sort(picks.begin(), picks.end());
  std::vector<Individual> survivors;
  std::size_t next = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (next < picks.size() && picks[next] == i) {
      survivors.push_back(std::move(pool[i]));
      ++next;
    } else if (eliminated != nullptr) {
      eliminated->push_back(std::move(pool[i]));
    }
  }
  return survivors;
}

// ---- the generation ----------------------------------------------------------------

void Discovery::step()
{
  if (!initialized()) {
    throw std::logic_error("discovery not initialized");
  }
  const int g = generation_ + 1;
  const std::size_t n = static_cast<std::size_t>(config_.niche_size);

  // Survivors of the previous generation drive every operator this generation.
  const Individual* global_best = nullptr;
  for (const auto& niche : niches_) {
    const auto& b = niche.best();
    if (global_best == nullptr || ranks_before(b, *global_best)) {
      global_best = &b;
    }
  }
  if (niches_.size() < 2 && !config_.replaced_by_m0.contains(OperatorTag::C2)) {
    spdlog::warn("generation {}: only one niche, C2 skipped", g);
  }

  std::vector<Pending> pending;
  std::vector<GenerationStats> gen_stats(niches_.size());
  for (std::size_t k = 0; k < niches_.size(); ++k) {
    gen_stats[k].generation = g;
    gen_stats[k].task = niches_[k].task;
    for (std::size_t p = 0; p < niches_[k].population.size(); ++p) {
      for (auto op : kOffspringOperators) {
        if (auto child = offspring(k, p, op, g, *global_best)) {
          pending.push_back(std::move(*child));
          ++gen_stats[k].offspring;
        } else {
          ++gen_stats[k].skipped;
        }
      }
    }
  }

  std::vector<Candidate> batch;
  for (const auto& p : pending) {
    batch.push_back({p.individual.task, &p.individual.program});
  }
  const auto reports = fitness_.evaluate(batch);
  std::vector<Individual> born;
  std::vector<std::vector<Individual>> pools(niches_.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    auto& ind = pending[i].individual;
    ind.apply(reports[i]);
    born.push_back(ind);
    if (ind.valid()) {
      pools[pending[i].niche].push_back(std::move(ind));
    } else {
      ++gen_stats[pending[i].niche].invalid;
      invalid_.push_back(std::move(ind));
    }
  }

  for (std::size_t k = 0; k < niches_.size(); ++k) {
    auto& niche = niches_[k];
    auto pool = std::move(niche.population);
    pool.insert(pool.end(), std::make_move_iterator(pools[k].begin()), std::make_move_iterator(pools[k].end()));
    Rng rng(stream("select", g, k));
    std::vector<Individual> eliminated;
    niche.population = select_survivors(std::move(pool), n, rng, &eliminated);
    for (auto& e : eliminated) {
      archive_.add(e);
      log_archive(e);
    }
  }

  std::set<std::string> alive_after_selection;
  for (const auto& niche : niches_) {
    for (const auto& m : niche.population) {
      alive_after_selection.insert(m.id);
    }
  }
  for (const auto& b : born) {
    outcomes_.emplace_back(b.lineage.op, alive_after_selection.contains(b.id));
  }

  const auto before_kt = history_.size();
  knowledge_transfer(g);
  for (std::size_t i = before_kt; i < history_.size(); ++i) {
    if (history_[i].applied) {
      for (std::size_t k = 0; k < niches_.size(); ++k) {
        gen_stats[k].kt_applied += niches_[k].task == history_[i].target ? 1 : 0;
      }
    }
  }
  for (auto& niche : niches_) {
    niche.sort();
    for (const auto& m : niche.population) {
      niche.note_best(m);
    }
  }

  for (std::size_t i = before_kt; i < history_.size(); ++i) {
    const auto& rec = history_[i];
    if (rec.transplant_id.empty()) {
      continue;
    }
    for (const auto& niche : niches_) {
      for (const auto& m : niche.population) {
        if (m.id == rec.transplant_id) {
          born.push_back(m);
        }
      }
    }
    for (const auto& inv : invalid_) {
      if (inv.id == rec.transplant_id) {
        born.push_back(inv);
      }
    }
  }

  generation_ = g;
  for (auto& st : gen_stats) {
    stats_.push_back(st);
  }
  write_generation(g, born);
  write_stats(g);
  write_snapshot();
}

void Discovery::knowledge_transfer(int generation)
{
  if (config_.disable_kt || niches_.size() < 2) {
    return;
  }
  ++kt_passes_;
  std::string history;
  for (const auto& r : history_) {
    history += fmt::format("- Generation {}: {} -> {}. Strategy: {} Result: {}\n", r.generation,
                           envs::task_key(r.source), envs::task_key(r.target), one_line(r.strategy),
                           r.applied ? fmt::format("transplant scored {} and replaced a reward scoring {}",
                                                   format_fitness(r.transplant_fitness),
                                                   format_fitness(r.replaced_fitness))
                                     : "failed (" + one_line(r.failure) + ")");
  }
  std::string overview;
  std::string names;
  for (const auto& niche : niches_) {
    overview += llm::describe_task(niche.metadata) + "\nCurrent rewards (score: idea):\n";
    for (const auto& m : niche.population) {
      overview += "- " + format_fitness(m.fitness) + ": " + one_line(m.thought) + "\n";
    }
    overview += "\n";
    names += (names.empty() ? "" : ", ") + std::string(envs::task_key(niche.task));
  }
  const auto pathways_wanted = static_cast<std::size_t>(config_.effective_kt_pathways());
  const auto prompt = llm::render_prompt(TemplateId::KtReflect,
                                         {{"kt_history", history.empty() ? std::string(kNoTransfers) : history},
                                          {"tasks_overview", overview},
                                          {"n_direction", std::to_string(pathways_wanted)},
                                          {"task_names", names}});
  std::optional<std::vector<llm::KtPathway>> plan;
  for (int attempt = 1; attempt <= config_.format_attempts && !plan; ++attempt) {
    const auto text = attempt == 1 ? prompt : prompt + "\n\n" + std::string(llm::format_reminder(TemplateId::KtReflect));
    try {
      plan = llm::parse_kt_plan(provider_->complete(TemplateId::KtReflect, text).response_text);
    } catch (const llm::ResponseParseError& e) {
      spdlog::debug("transfer plan rejected (attempt {}): {}", attempt, e.what());
    }
  }
  if (!plan) {
    spdlog::warn("generation {}: no parsable transfer plan; knowledge transfer skipped", generation);
    return;
  }
  std::erase_if(*plan, [&](const llm::KtPathway& p) {
    auto configured = [&](envs::TaskId t) {
      return std::any_of(niches_.begin(), niches_.end(), [&](const Niche& n) { return n.task == t; });
    };
    return !configured(p.source) || !configured(p.target);
  });
  if (plan->size() > pathways_wanted) {
    plan->resize(pathways_wanted);
  }

  auto niche_of = [&](envs::TaskId t) -> Niche& {
    return *std::find_if(niches_.begin(), niches_.end(), [&](const Niche& n) { return n.task == t; });
  };

  // Sources are read from the post-selection populations; transplants are
  // evaluated together and applied in plan order.
  std::vector<TransferRecord> records;
  std::vector<std::optional<Individual>> transplants;
  for (const auto& p : *plan) {
    const auto& source = niche_of(p.source).best();
    const auto& target = niche_of(p.target);
    TransferRecord rec;
    rec.generation = generation;
    rec.source = p.source;
    rec.target = p.target;
    rec.reflection = p.rationale;
    rec.strategy = p.guidance;
    auto answer = ask(TemplateId::KtExecute,
                      {{"source_task", std::string(envs::task_key(p.source))},
                       {"source_thought", source.thought},
                       {"source_code", source.program.source},
                       {"target_description", llm::describe_task(target.metadata)},
                       {"reflection", p.rationale},
                       {"strategy", p.guidance}},
                      p.target);
    if (!answer) {
      rec.failure = "no valid adaptation for the target schema";
      transplants.emplace_back();
    } else {
      Lineage l;
      l.op = OperatorTag::Kt;
      l.parents = {source.id};
      l.reflection = p.rationale;
      transplants.push_back(make_individual(p.target, std::move(*answer), std::move(l), generation));
      rec.transplant_id = transplants.back()->id;
    }
    records.push_back(std::move(rec));
  }
  std::vector<Candidate> batch;
  for (const auto& t : transplants) {
    if (t) {
      batch.push_back({t->task, &t->program});
    }
  }
  const auto reports = fitness_.evaluate(batch);
  std::size_t r = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    if (transplants[i]) {
      auto& t = *transplants[i];
      t.apply(reports[r++]);
      rec.transplant_fitness = t.fitness;
      if (!t.valid()) {
        rec.failure = "transplant failed evaluation: " + t.failure_reason;
        invalid_.push_back(t);
      } else {
        auto& target = niche_of(rec.target);
        const auto worst = std::max_element(target.population.begin(), target.population.end(), ranks_before);
        rec.replaced_id = worst->id;
        rec.replaced_fitness = worst->fitness;
        archive_.add(*worst);
        log_archive(*worst);
        *worst = std::move(t);
        rec.applied = true;
        target.sort();
      }
    }
    if (run_dir_) {
      append_text_file(*run_dir_ / "transfers.jsonl", rec.to_json().dump() + "\n");
    }
    history_.push_back(std::move(rec));
  }
}

void Discovery::run()
{
  if (!initialized()) {
    initialize();
  }
  while (generation_ < config_.generations) {
    step();
  }
}

std::vector<Individual> Discovery::best_per_task() const
{
  std::vector<Individual> out;
  for (const auto& n : niches_) {
    out.push_back(n.best_so_far ? *n.best_so_far : n.best());
  }
  return out;
}

// ---- artifacts ---------------------------------------------------------------------

void Discovery::log_archive(const Individual& individual)
{
  if (run_dir_) {
    auto j = individual.to_json();
    j["status"] = status_key(Status::Eliminated);
    append_text_file(*run_dir_ / "archive.jsonl", j.dump() + "\n");
  }
}

void Discovery::write_generation(int generation, const std::vector<Individual>& born)
{
  if (!run_dir_) {
    return;
  }
  std::set<std::string> alive;
  for (const auto& niche : niches_) {
    for (const auto& m : niche.population) {
      alive.insert(m.id);
    }
  }
  for (auto ind : born) {
    if (ind.valid()) {
      ind.status = alive.contains(ind.id) ? Status::Alive : Status::Eliminated;
    }
    const auto dir = *run_dir_ / "niches" / std::string(envs::task_key(ind.task)) / fmt::format("gen-{}", generation);
    fs::create_directories(dir);
    write_text_file(dir / (ind.id + ".json"), dump_json(ind.to_json()));
  }
}

void Discovery::write_stats(int generation)
{
  std::string rows;
  for (auto& st : stats_) {
    if (st.generation != generation) {
      continue;
    }
    for (const auto& n : niches_) {
      if (n.task != st.task) {
        continue;
      }
      st.best_fitness = n.best_so_far ? n.best_so_far->fitness : eval::kInvalidFitness;
      double sum = 0.0;
      for (const auto& m : n.population) {
        sum += m.fitness;
      }
      st.mean_fitness = n.population.empty() ? eval::kInvalidFitness : sum / static_cast<double>(n.population.size());
    }
    rows += fmt::format("{},{},{},{},{},{}\n", st.generation, envs::task_key(st.task), format_fitness(st.best_fitness),
                        format_fitness(st.mean_fitness), st.invalid, st.kt_applied);
    spdlog::info("generation {} {}: best {} mean {} ({} offspring, {} invalid, {} skipped, {} transferred in)",
                 st.generation, envs::task_key(st.task), format_fitness(st.best_fitness),
                 format_fitness(st.mean_fitness), st.offspring, st.invalid, st.skipped, st.kt_applied);
  }
  if (run_dir_) {
    append_text_file(*run_dir_ / "report.csv", rows);
  }
}

namespace {

Json stats_json(const GenerationStats& s)
{
  auto f = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  return Json{{"generation", s.generation}, {"task", envs::task_key(s.task)}, {"best_fitness", f(s.best_fitness)},
              {"mean_fitness", f(s.mean_fitness)}, {"offspring", s.offspring}, {"invalid", s.invalid},
              {"skipped", s.skipped}, {"kt_applied", s.kt_applied}};
}

GenerationStats stats_from(const Json& j)
{
  auto f = [](const Json& x) { return x.is_null() ? eval::kInvalidFitness : x.get<double>(); };
  GenerationStats s;
  s.generation = j.at("generation").get<int>();
  s.task = envs::task_from_key(j.at("task").get<std::string>());
  s.best_fitness = f(j.at("best_fitness"));
  s.mean_fitness = f(j.at("mean_fitness"));
  s.offspring = j.at("offspring").get<int>();
  s.invalid = j.at("invalid").get<int>();
  s.skipped = j.at("skipped").get<int>();
  s.kt_applied = j.at("kt_applied").get<int>();
  return s;
}

}  // namespace

void Discovery::write_snapshot()
{
  if (!run_dir_) {
    return;
  }
  Json niches = Json::array();
  for (const auto& n : niches_) {
    niches.push_back(n.to_json());
  }
  Json history = Json::array();
  for (const auto& h : history_) {
    history.push_back(h.to_json());
  }
  Json stats = Json::array();
  for (const auto& s : stats_) {
    stats.push_back(stats_json(s));
  }
  Json invalid = Json::array();
  for (const auto& i : invalid_) {
    invalid.push_back(i.to_json());
  }
  Json outcomes = Json::array();
  for (const auto& [op, survived] : outcomes_) {
    outcomes.push_back(Json{{"operator", operator_key(op)}, {"survived", survived}});
  }
  Json files = Json::object();
  for (const char* name : kLogFiles) {
    files[name] = file_size_or_zero(*run_dir_ / name);
  }
  const Json snap{{"schema_version", 1},
                  {"generation", generation_},
                  {"next_id", next_id_},
                  {"kt_passes", kt_passes_},
                  {"niches", niches},
                  {"archive", archive_.to_json()},
                  {"history", history},
                  {"stats", stats},
                  {"invalid", invalid},
                  {"offspring_outcomes", outcomes},
                  {"files", files}};
  const auto path = *run_dir_ / "snapshots" / fmt::format("gen-{}.json", generation_);
  write_text_file(path.string() + ".tmp", dump_json(snap));
  fs::rename(path.string() + ".tmp", path);
}

std::unique_ptr<Discovery> Discovery::resume(const fs::path& run_dir, llm::Provider& provider, FitnessService& fitness)
{
  if (!fs::is_directory(run_dir)) {
    throw std::runtime_error("run directory not found: " + run_dir.string());
  }
  auto config = RunConfig::from_json(read_json_file(run_dir / "config.json"));
  int latest = -1;
  if (fs::is_directory(run_dir / "snapshots")) {
    for (const auto& e : fs::directory_iterator(run_dir / "snapshots")) {
      const auto name = e.path().filename().string();
      if (name.starts_with("gen-") && name.ends_with(".json")) {
        latest = std::max(latest, std::stoi(name.substr(4, name.size() - 9)));
      }
    }
  }
  // The Discovery constructor wraps the provider in a recorder; fast-forward first.
  auto d = std::make_unique<Discovery>(config, provider, fitness, run_dir);
  if (latest < 0) {
    spdlog::warn("{} has no snapshot; starting the run over", run_dir.string());
    return d;
  }
  const auto snap = read_json_file(run_dir / "snapshots" / fmt::format("gen-{}.json", latest));
  d->generation_ = snap.at("generation").get<int>();
  d->next_id_ = snap.at("next_id").get<long>();
  d->kt_passes_ = snap.at("kt_passes").get<int>();
  for (const auto& n : snap.at("niches")) {
    d->niches_.push_back(Niche::from_json(n));
  }
  d->archive_ = Archive::from_json(snap.at("archive"));
  for (const auto& h : snap.at("history")) {
    d->history_.push_back(TransferRecord::from_json(h));
  }
  for (const auto& s : snap.at("stats")) {
    d->stats_.push_back(stats_from(s));
  }
  for (const auto& i : snap.at("invalid")) {
    d->invalid_.push_back(Individual::from_json(i));
  }
  for (const auto& o : snap.at("offspring_outcomes")) {
    d->outcomes_.emplace_back(operator_from_key(o.at("operator").get<std::string>()), o.at("survived").get<bool>());
  }
  for (const char* name : kLogFiles) {
    const auto path = run_dir / name;
    const auto size = snap.at("files").at(name).get<std::uintmax_t>();
    if (file_size_or_zero(path) > size) {
      fs::resize_file(path, size);
    }
  }
  for (const auto& task_dir : fs::directory_iterator(run_dir / "niches", fs::directory_options::skip_permission_denied)) {
    for (const auto& gen_dir : fs::directory_iterator(task_dir.path())) {
      const auto name = gen_dir.path().filename().string();
      if (name.starts_with("gen-") && std::stoi(name.substr(4)) > latest) {
        fs::remove_all(gen_dir.path());
      }
    }
  }
  if (auto* replay = dynamic_cast<llm::ReplayProvider*>(&provider)) {
    std::istringstream in(read_text_file(run_dir / "exchanges.jsonl"));
    std::string line;
    long skipped = 0;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto j = Json::parse(line);
      const auto id = llm::find_template(j.at("template_id").get<std::string>());
      if (!id || !replay->discard(*id, j.value("task", std::string()))) {
        throw std::runtime_error("replay script does not match the exchanges already logged in " + run_dir.string());
      }
      ++skipped;
    }
    spdlog::info("resume: replay script fast-forwarded past {} exchange(s)", skipped);
  }
  spdlog::info("resumed {} at generation {}", run_dir.string(), d->generation_);
  return d;
}

DiscoveryResult run_discovery(const RunConfig& config, llm::Provider& provider, FitnessService& fitness,
                              const std::optional<fs::path>& run_dir, bool resume)
{
  std::unique_ptr<Discovery> d;
  if (resume) {
    if (!run_dir) {
      throw std::invalid_argument("resume needs a run directory");
    }
    d = Discovery::resume(*run_dir, provider, fitness);
  } else {
    d = std::make_unique<Discovery>(config, provider, fitness, run_dir);
  }
  d->run();
  return DiscoveryResult{d->niches(), d->best_per_task()};
}

}  // namespace rewardevo::evolution
