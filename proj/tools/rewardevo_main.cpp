// Command-line driver: discover, eval-reward, transfer, report.
//
// Exit codes are a stable contract: 0 success, 2 configuration or input
// error, 3 provider error, 4 evaluation failure, 1 anything else. Failures
// print one JSON object on stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rewardevo/core/json.hpp"
#include "rewardevo/core/rng.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/eval/eval.hpp"
#include "rewardevo/evolution/evolution.hpp"
#include "rewardevo/llm/llm.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace fs = std::filesystem;
using namespace rewardevo;
using evolution::ConfigError;
using evolution::RunConfig;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kProvider = 3, kEvaluation = 4 };

// Failure with a chosen exit code; everything else is mapped by type in main.
struct CliFailure : std::runtime_error {
  CliFailure(Exit code, const std::string& what) : std::runtime_error(what), code(code) {}
  Exit code;
};

[[noreturn]] void fail(Exit code, const std::string& what) { throw CliFailure(code, what); }

// Flags shared by discover, eval-reward and transfer. Unset flags leave the
// configuration file's value alone.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string replay;
  std::string profile;
  std::optional<int> workers;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c)
{
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--replay", c.replay, "replay script (JSONL) used instead of the live provider");
  cmd->add_option("--profile", c.profile, "evaluation budget profile")->check(CLI::IsMember({"search", "final"}));
  cmd->add_option("--workers", c.workers, "evaluation workers (0 = hardware concurrency)");
  cmd->add_option("--out", c.out, "output directory");
}

Json read_json_or_fail(const fs::path& path)
{
  try {
    return read_json_file(path);
  } catch (const std::exception& e) {
    fail(kConfig, fmt::format("cannot read {}: {}", path.string(), e.what()));
  }
}

RunConfig load_config(const Common& c)
{
  RunConfig config = c.config.empty() ? RunConfig{} : RunConfig::from_json(read_json_or_fail(c.config));
  if (c.seed) {
    config.seed = *c.seed;
  }
  if (!c.replay.empty()) {
    config.replay = c.replay;
  }
  if (!c.profile.empty()) {
    config.profile = c.profile;
  }
  if (c.workers) {
    config.workers = *c.workers;
  }
  return config;
}

std::unique_ptr<llm::Provider> make_provider(const RunConfig& config)
{
  if (config.replay) {
    if (!fs::exists(*config.replay)) {
      fail(kConfig, "replay script not found: " + *config.replay);
    }
    try {
      return std::make_unique<llm::ReplayProvider>(llm::ReplayProvider::from_file(*config.replay));
    } catch (const std::invalid_argument& e) {
      fail(kConfig, fmt::format("bad replay script {}: {}", *config.replay, e.what()));
    }
  }
  return std::make_unique<llm::HttpProvider>(config.provider);
}

envs::TaskId task_or_fail(const std::string& name)
{
  const auto id = envs::find_task(name);
  if (!id) {
    fail(kConfig, "unknown task: " + name);
  }
  return *id;
}

rsl::RewardProgram load_reward(const std::string& path, envs::TaskId task)
{
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    fail(kConfig, fmt::format("cannot read {}: {}", path, e.what()));
  }
  rsl::RewardProgram program;
  try {
    program = rsl::parse(text);
  } catch (const rsl::ParseError& e) {
    fail(kConfig, fmt::format("{} does not parse: {}", path, e.what()));
  }
  const auto missing = rsl::validate(program, envs::task_schema(task));
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) {
      list += (list.empty() ? "" : ", ") + m;
    }
    fail(kConfig, fmt::format("{} reads fields that {} does not provide: {}", path, envs::task_key(task), list));
  }
  return program;
}

// Leading "# " comment lines, joined; the conventional place for a reward's idea.
std::string leading_comment(const std::string& source)
{
  std::istringstream in(source);
  std::string line;
  std::string out;
  while (std::getline(in, line) && line.starts_with("#")) {
    const auto text = line.substr(line.find_first_not_of("# ") == std::string::npos ? line.size()
                                                                                    : line.find_first_not_of("# "));
    if (!text.empty()) {
      out += (out.empty() ? "" : " ") + text;
    }
  }
  return out;
}

Json fitness_json(double f) { return std::isfinite(f) ? Json(f) : Json(nullptr); }

// ---- discover -------------------------------------------------------------------

struct DiscoverOptions {
  Common common;
  std::string resume;
  std::vector<std::string> replace_ops;
  bool disable_kt = false;
  std::optional<int> gmax;
  std::vector<std::string> tasks;
  std::optional<int> niche_size;
};

void print_generation(const evolution::Discovery& d)
{
  for (const auto& s : d.stats()) {
    if (s.generation == d.generation()) {
      std::cout << fmt::format("gen {:>2}  {:<24} best {:>10}  mean {:>10}  invalid {}  kt {}\n", s.generation,
                               envs::task_key(s.task), evolution::format_fitness(s.best_fitness),
                               evolution::format_fitness(s.mean_fitness), s.invalid, s.kt_applied);
    }
  }
  std::cout.flush();
}

int cmd_discover(const DiscoverOptions& o)
{
  RunConfig config;
  fs::path run_dir;
  const bool resuming = !o.resume.empty();
  if (resuming) {
    const bool overridden = !o.common.config.empty() || o.common.seed || !o.common.profile.empty() ||
                            !o.replace_ops.empty() || o.disable_kt || o.gmax || !o.tasks.empty() || o.niche_size ||
                            !o.common.out.empty();
    if (overridden) {
      fail(kConfig, "--resume takes its configuration from the run directory; only --replay and --workers apply");
    }
    run_dir = o.resume;
    if (!fs::exists(run_dir / "config.json")) {
      fail(kConfig, "not a run directory: " + run_dir.string());
    }
    config = RunConfig::from_json(read_json_or_fail(run_dir / "config.json"));
    if (!o.common.replay.empty()) {
      config.replay = o.common.replay;
    }
    if (o.common.workers) {
      config.workers = *o.common.workers;
    }
  } else {
    config = load_config(o.common);
    if (!o.tasks.empty()) {
      config.tasks.clear();
      for (const auto& t : o.tasks) {
        config.tasks.push_back(task_or_fail(t));
      }
    }
    if (o.gmax) {
      config.generations = *o.gmax;
    }
    if (o.niche_size) {
      config.niche_size = *o.niche_size;
    }
    if (o.disable_kt) {
      config.disable_kt = true;
    }
    for (const auto& spec : o.replace_ops) {
      const auto eq = spec.find('=');
      const auto target = eq == std::string::npos ? std::string() : spec.substr(eq + 1);
      if (eq == std::string::npos || (target != "m0" && target != "m0_simple")) {
        fail(kConfig, "--replace-op expects <op>=m0, got " + spec);
      }
      try {
        config.replaced_by_m0.insert(evolution::operator_from_key(spec.substr(0, eq)));
      } catch (const std::invalid_argument&) {
        fail(kConfig, "unknown operator in --replace-op: " + spec);
      }
    }
    if (o.common.out.empty()) {
      fail(kConfig, "discover needs --out <dir> (or --resume <dir>)");
    }
    run_dir = o.common.out;
    if (fs::exists(run_dir) && !fs::is_empty(run_dir)) {
      fail(kConfig, "output directory is not empty: " + run_dir.string() + " (use --resume to continue a run)");
    }
  }
  config.validate();

  auto provider = make_provider(config);
  auto fitness = evolution::make_scheduler_fitness(config, run_dir / "fitness-cache");
  std::unique_ptr<evolution::Discovery> d;
  if (resuming) {
    d = evolution::Discovery::resume(run_dir, *provider, *fitness);
    spdlog::info("resuming {} after generation {}", run_dir.string(), d->generation());
  } else {
    d = std::make_unique<evolution::Discovery>(config, *provider, *fitness, run_dir);
  }
  if (!d->initialized()) {
    d->initialize();
    print_generation(*d);
  }
  while (d->generation() < config.generations) {
    d->step();
    print_generation(*d);
  }
  for (const auto& best : d->best_per_task()) {
    std::cout << fmt::format("best {:<24} {}  {}\n", envs::task_key(best.task), best.id,
                             evolution::format_fitness(best.fitness));
  }
  std::cout << "run directory: " << run_dir.string() << "\n";
  return kOk;
}

// ---- eval-reward ----------------------------------------------------------------

struct EvalOptions {
  Common common;
  std::string file;
  std::string bundled;
  std::string task;
};

int cmd_eval_reward(const EvalOptions& o)
{
  auto config = load_config(o.common);
  config.tasks = {task_or_fail(o.task)};
  config.validate();
  const auto task = config.tasks.front();
  if (o.file.empty() == o.bundled.empty()) {
    fail(kConfig, "give either a reward file or --bundled");
  }
  const auto program = o.bundled.empty() ? load_reward(o.file, task)
                       : o.bundled == "handcrafted" ? envs::handcrafted_reward(task)
                                                    : envs::discovered_reward(task);

  std::optional<fs::path> cache;
  if (!o.common.out.empty()) {
    cache = fs::path(o.common.out) / "fitness-cache";
  }
  auto fitness = evolution::make_scheduler_fitness(config, cache);
  const auto report = fitness->evaluate({{task, &program}}).front();

  Json out = report.to_json();
  out["task"] = envs::task_key(task);
  out["profile"] = config.profile;
  out["seed"] = config.seed;
  out["reward_hash"] = program.content_hash;
  std::cout << out.dump(2) << "\n";
  if (!o.common.out.empty()) {
    write_text_file(fs::path(o.common.out) / "report.json", dump_json(out));
  }
  spdlog::info("{} under profile {}: fitness {} over {} test instances x {} runs", envs::task_key(task),
               config.profile, evolution::format_fitness(report.fitness), report.score_matrix.size(),
               report.score_matrix.empty() ? 0 : report.score_matrix.front().size());
  if (report.invalid) {
    fail(kEvaluation, "reward failed evaluation: " + report.failure_reason);
  }
  return kOk;
}

// ---- transfer -------------------------------------------------------------------

struct TransferOptions {
  Common common;
  std::string file;
  std::string from;
  std::string to;
  std::string rationale = "The operator asked for this reward to be carried over unchanged in spirit.";
  std::string strategy = "Map each quantity the reward reads to the closest field of the target task.";
};

int cmd_transfer(const TransferOptions& o)
{
  auto config = load_config(o.common);
  const auto source = task_or_fail(o.from);
  const auto target = task_or_fail(o.to);
  if (source == target) {
    fail(kConfig, "source and target task are the same");
  }
  config.tasks = {target};
  config.validate();
  if (o.common.out.empty()) {
    fail(kConfig, "transfer needs --out <dir>");
  }
  const auto program = load_reward(o.file, source);
  auto thought = leading_comment(program.source);
  if (thought.empty()) {
    thought = "(no idea stated)";
  }

  auto provider = make_provider(config);
  std::string rejection;
  auto adapted = evolution::adapt_reward(*provider, source, thought, program.source, target, o.rationale, o.strategy,
                                         config.format_attempts, &rejection);
  if (!adapted) {
    fail(kProvider, fmt::format("no valid adaptation for {} after {} prompt(s): {}", envs::task_key(target),
                                config.format_attempts, rejection));
  }

  const fs::path out = o.common.out;
  auto fitness = evolution::make_scheduler_fitness(config, out / "fitness-cache");
  const auto& anchor = envs::handcrafted_reward(target);
  const auto reports = fitness->evaluate({{target, &anchor}, {target, &adapted->program}});

  std::string file_text;
  std::istringstream idea(adapted->thought);
  for (std::string line; std::getline(idea, line);) {
    file_text += "# " + line + "\n";
  }
  file_text += adapted->program.source;
  if (!file_text.ends_with("\n")) {
    file_text += "\n";
  }
  write_text_file(out / "adapted.rsl", file_text);
  const Json summary{{"source_task", envs::task_key(source)},
                     {"target_task", envs::task_key(target)},
                     {"source_file", o.file},
                     {"thought", adapted->thought},
                     {"attempts", adapted->attempts},
                     {"profile", config.profile},
                     {"seed", config.seed},
                     {"anchor", {{"fitness", fitness_json(reports[0].fitness)}, {"hash", anchor.content_hash}}},
                     {"adapted",
                      {{"fitness", fitness_json(reports[1].fitness)},
                       {"hash", adapted->program.content_hash},
                       {"invalid", reports[1].invalid},
                       {"failure_reason", reports[1].failure_reason}}}};
  write_text_file(out / "transfer.json", dump_json(summary));

  std::cout << fmt::format("{} -> {}\n", envs::task_key(source), envs::task_key(target));
  std::cout << fmt::format("  anchor   {}\n", evolution::format_fitness(reports[0].fitness));
  std::cout << fmt::format("  adapted  {}\n", evolution::format_fitness(reports[1].fitness));
  std::cout << "  written  " << (out / "adapted.rsl").string() << "\n";
  if (reports[1].invalid) {
    fail(kEvaluation, "adapted reward failed evaluation: " + reports[1].failure_reason);
  }
  return kOk;
}

// ---- report ---------------------------------------------------------------------

struct RunView {
  fs::path dir;
  int generation = 0;
  std::vector<envs::TaskId> tasks;
  std::map<envs::TaskId, double> best;
  Json snapshot;
};

RunView load_run(const fs::path& dir)
{
  if (!fs::is_directory(dir)) {
    fail(kConfig, "run directory not found: " + dir.string());
  }
  static const std::regex kSnap(R"(gen-(\d+)\.json)");
  int latest = -1;
  if (fs::is_directory(dir / "snapshots")) {
    for (const auto& e : fs::directory_iterator(dir / "snapshots")) {
      std::smatch m;
      const auto name = e.path().filename().string();
      if (std::regex_match(name, m, kSnap)) {
        latest = std::max(latest, std::stoi(m[1].str()));
      }
    }
  }
  if (latest < 0) {
    fail(kConfig, "no snapshot in " + dir.string() + "; the run never finished initialization");
  }
  RunView v;
  v.dir = dir;
  v.generation = latest;
  v.snapshot = read_json_or_fail(dir / "snapshots" / fmt::format("gen-{}.json", latest));
  for (const auto& nj : v.snapshot.at("niches")) {
    const auto niche = evolution::Niche::from_json(nj);
    v.tasks.push_back(niche.task);
    v.best[niche.task] = niche.best_so_far ? niche.best_so_far->fitness : niche.best().fitness;
  }
  return v;
}

struct ReportOptions {
  std::string run;
  std::vector<std::string> compare;
  std::string out;
};

std::string csv_number(double x) { return std::isfinite(x) ? fmt::format("{:.9g}", x) : std::string("invalid"); }

int cmd_report(const ReportOptions& o)
{
  const auto run = load_run(o.run);
  const fs::path out = o.out.empty() ? run.dir : fs::path(o.out);

  std::string trajectory = "generation,task,best_so_far\n";
  for (const auto& s : run.snapshot.at("stats")) {
    if (s.at("generation").get<int>() >= 1) {
      const auto best = s.at("best_fitness").is_null() ? eval::kInvalidFitness : s.at("best_fitness").get<double>();
      trajectory += fmt::format("{},{},{}\n", s.at("generation").get<int>(), s.at("task").get<std::string>(),
                                csv_number(best));
    }
  }
  write_text_file(out / "trajectory.csv", trajectory);

  std::map<std::string, std::pair<long, long>> per_op;
  for (auto op : evolution::kOffspringOperators) {
    per_op[std::string(evolution::operator_key(op))] = {0, 0};
  }
  for (const auto& oc : run.snapshot.at("offspring_outcomes")) {
    auto& [made, kept] = per_op[oc.at("operator").get<std::string>()];
    ++made;
    kept += oc.at("survived").get<bool>() ? 1 : 0;
  }
  std::string operators = "operator,offspring,survived,survival_rate\n";
  for (const auto& [op, counts] : per_op) {
    const auto [made, kept] = counts;
    operators += fmt::format("{},{},{},{}\n", op, made, kept,
                             made == 0 ? std::string() : fmt::format("{:.6f}", static_cast<double>(kept) / made));
  }
  write_text_file(out / "operators.csv", operators);

  if (!o.compare.empty()) {
    std::string sne = "baseline_run,task,ready_fitness,baseline_fitness,ratio\n";
    for (const auto& other_dir : o.compare) {
      const auto other = load_run(other_dir);
      std::vector<double> candidate;
      std::vector<double> baseline;
      for (auto t : run.tasks) {
        if (!other.best.contains(t)) {
          fail(kConfig, fmt::format("{} has no niche for {}", other_dir, envs::task_key(t)));
        }
        candidate.push_back(run.best.at(t));
        baseline.push_back(other.best.at(t));
        sne += fmt::format("{},{},{},{},{}\n", other_dir, envs::task_key(t), csv_number(candidate.back()),
                           csv_number(baseline.back()), csv_number(candidate.back() / baseline.back()));
      }
      double value = 0.0;
      try {
        value = eval::compute_sne(candidate, baseline);
      } catch (const eval::SneError& e) {
        fail(kConfig, fmt::format("SNE against {} is undefined: {}", other_dir, e.what()));
      }
      sne += fmt::format("{},sne,,,{}\n", other_dir, csv_number(value));
      std::cout << fmt::format("SNE vs {}: {}\n", other_dir, csv_number(value));
    }
    write_text_file(out / "sne.csv", sne);
  }
  std::cout << fmt::format("report for {} (generation {}) written to {}\n", run.dir.string(), run.generation,
                           out.string());
  return kOk;
}

int report_failure(Exit code, std::string_view kind, std::string_view message)
{
  std::cerr << Json{{"error", kind}, {"exit_code", static_cast<int>(code)}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv)
{
  auto logger = spdlog::stderr_color_mt("rewardevo");
  spdlog::set_default_logger(logger);

  CLI::App app{"Evolutionary reward discovery for learned optimizer-control tasks"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  DiscoverOptions disc;
  auto* discover = app.add_subcommand("discover", "run the multi-task reward search");
  add_common(discover, disc.common);
  discover->add_option("--resume", disc.resume, "continue the run in this directory from its last snapshot");
  discover->add_option("--replace-op", disc.replace_ops, "ablation: replace an operator by simple mutation (m1=m0)");
  discover->add_flag("--disable-kt", disc.disable_kt, "ablation: no knowledge transfer");
  discover->add_option("--gmax", disc.gmax, "number of generations");
  discover->add_option("--niche-size", disc.niche_size, "individuals per niche");
  discover->add_option("--tasks", disc.tasks, "tasks to evolve (keys or aliases)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval-reward", "measure the fitness of one reward program");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("file", ev.file, "reward program (RSL)");
  eval_cmd->add_option("--bundled", ev.bundled, "use a bundled reward instead of a file")
      ->check(CLI::IsMember({"handcrafted", "discovered"}));
  eval_cmd->add_option("--task", ev.task, "task the reward is for")->required();

  TransferOptions tr;
  auto* transfer = app.add_subcommand("transfer", "adapt a reward to another task and compare it with the anchor");
  add_common(transfer, tr.common);
  transfer->add_option("file", tr.file, "source reward program (RSL)")->required();
  transfer->add_option("--from", tr.from, "task the reward was written for")->required();
  transfer->add_option("--to", tr.to, "target task")->required();
  transfer->add_option("--rationale", tr.rationale, "why the logic should carry over");
  transfer->add_option("--strategy", tr.strategy, "guidance for the adaptation");

  ReportOptions rep;
  auto* report = app.add_subcommand("report", "write trajectory, operator and SNE tables for a run");
  report->add_option("run", rep.run, "run directory")->required();
  report->add_option("--compare", rep.compare, "ablation run directories to compare against (SNE)");
  report->add_option("--out", rep.out, "output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    return report_failure(kConfig, "usage", e.what());
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*discover) {
      return cmd_discover(disc);
    }
    if (*eval_cmd) {
      return cmd_eval_reward(ev);
    }
    if (*transfer) {
      return cmd_transfer(tr);
    }
    return cmd_report(rep);
  } catch (const CliFailure& e) {
    const char* kind = e.code == kConfig ? "config" : e.code == kProvider ? "provider" : "evaluation";
    return report_failure(e.code, kind, e.what());
  } catch (const ConfigError& e) {
    return report_failure(kConfig, "config", e.what());
  } catch (const llm::ProviderError& e) {
    return report_failure(kProvider, "provider", e.what());
  } catch (const evolution::EvaluationError& e) {
    return report_failure(kEvaluation, "evaluation", e.what());
  } catch (const std::exception& e) {
    return report_failure(kOther, "internal", e.what());
  }
}
