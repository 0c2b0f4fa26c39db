#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rewardevo/core/json.hpp"
#include "rewardevo/core/rng.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/eval/eval.hpp"
#include "rewardevo/llm/llm.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::evolution {

// ---- configuration ----------------------------------------------------------

enum class OperatorTag { Init, Expert, M1, M2, M3, C1, C2, Kt, M0Simple };

std::string_view operator_key(OperatorTag tag);
// Throws std::invalid_argument for an unknown key.
OperatorTag operator_from_key(std::string_view key);

// The reproduction operators, in the order each parent applies them.
inline constexpr std::array<OperatorTag, 5> kOffspringOperators{OperatorTag::M1, OperatorTag::M2, OperatorTag::M3,
                                                                OperatorTag::C1, OperatorTag::C2};

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// The evaluation machinery failed, as opposed to a candidate reward.
class EvaluationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::vector<envs::TaskId> tasks{envs::TaskId::DeOperatorSelection, envs::TaskId::PsoParameterControl,
                                  envs::TaskId::AlgorithmSelection};
  // Problem suite.
  int dimension = 10;
  std::uint64_t suite_seed = 0;
  // Search.
  int niche_size = 5;
  int generations = 7;
  int history_length = 5;
  int failure_cases = 3;
  int archive_cap = 200;
  int archive_prompt_entries = 20;  // best archived rewards shown to the summarizer
  int kt_pathways = 0;              // 0: one per niche
  int init_max_attempts = 0;        // 0: 5 * (niche_size - 1)
  int difference_rate = 95;
  int format_attempts = 3;  // prompts per slot before a malformed answer skips it
  bool online_metadata = false;
  // Budgets.
  int gamma_search = 3;
  int gamma_final = 51;
  long fe_budget = 5000;
  int training_episodes = 20;
  std::string profile = "search";
  // Provider: a replay script when set, else the live endpoint.
  llm::ProviderConfig provider;
  std::optional<std::string> replay;
  int workers = 0;
  std::uint64_t seed = 0;
  // Ablations.
  std::set<OperatorTag> replaced_by_m0;
  bool disable_kt = false;

  // Budget of the configured profile.
  eval::EvalBudget budget() const;
  int effective_kt_pathways() const { return kt_pathways > 0 ? kt_pathways : static_cast<int>(tasks.size()); }
  int effective_init_attempts() const { return init_max_attempts > 0 ? init_max_attempts : 5 * (niche_size - 1); }

  // Throws ConfigError naming the offending field.
  void validate() const;
  Json to_json() const;
  // Unknown keys are rejected. Throws ConfigError; the result is validated.
  static RunConfig from_json(const Json& j);
};

// ---- individuals and populations -------------------------------------------

enum class Status { Alive, Eliminated, Invalid };

std::string_view status_key(Status s);

struct TraceEntry {
  std::string id;
  int generation = 0;
  std::string thought;
  std::string source;
  double fitness = eval::kInvalidFitness;

  Json to_json() const;
  static TraceEntry from_json(const Json& j);
};

struct Lineage {
  OperatorTag op = OperatorTag::Init;
  std::vector<std::string> parents;
  std::vector<std::string> references;  // other individuals shown to the operator
  std::string reflection;
  int attempts = 1;  // prompts spent on the final answer
};

struct Individual {
  std::string id;
  envs::TaskId task = envs::TaskId::DeOperatorSelection;
  std::string thought;
  rsl::RewardProgram program;
  double fitness = eval::kInvalidFitness;
  std::vector<double> per_instance_medians;
  std::string failure_reason;
  std::string policy_digest;
  long budget_used = 0;
  int generation = 0;
  Lineage lineage;
  Status status = Status::Alive;
  // Earlier versions along the first-parent line, oldest first, at most L long.
  std::vector<TraceEntry> ancestry;

  bool valid() const { return status != Status::Invalid; }
  void apply(const eval::FitnessReport& report);
  TraceEntry trace_entry() const;

  Json to_json() const;
  // Re-parses the program. Throws std::runtime_error on a malformed entry.
  static Individual from_json(const Json& j);
};

// Fitness, then older generation, then id: the ranking order used everywhere.
bool ranks_before(const Individual& a, const Individual& b);

struct Niche {
  envs::TaskId task = envs::TaskId::DeOperatorSelection;
  envs::Metadata metadata;
  std::vector<Individual> population;  // alive members, kept in rank order
  bool init_fallback = false;
  std::optional<Individual> best_so_far;

  const Individual& best() const;
  const Individual& worst() const;
  void sort();
  // Records `candidate` when it beats the best seen so far.
  void note_best(const Individual& candidate);

  Json to_json() const;
  static Niche from_json(const Json& j);
};

class Archive {
public:
  explicit Archive(std::size_t cap = 200) : cap_(cap) {}

  // Marks the individual eliminated; evicts the oldest entries beyond the cap.
  void add(Individual individual);
  const std::deque<Individual>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t cap() const { return cap_; }

  const std::string& summary() const { return summary_; }
  std::optional<int> summary_generation() const { return summary_generation_; }
  void set_summary(std::string text, int generation);

  Json to_json() const;
  static Archive from_json(const Json& j);

private:
  std::size_t cap_;
  std::deque<Individual> entries_;
  std::string summary_;
  std::optional<int> summary_generation_;
};

struct TransferRecord {
  int generation = 0;
  envs::TaskId source = envs::TaskId::DeOperatorSelection;
  envs::TaskId target = envs::TaskId::PsoParameterControl;
  std::string reflection;
  std::string strategy;
  std::string transplant_id;
  std::string replaced_id;
  double transplant_fitness = eval::kInvalidFitness;
  double replaced_fitness = eval::kInvalidFitness;
  bool applied = false;
  std::string failure;

  Json to_json() const;
  static TransferRecord from_json(const Json& j);
};

// ---- fitness ----------------------------------------------------------------

struct Candidate {
  envs::TaskId task;
  const rsl::RewardProgram* program;
};

class FitnessService {
public:
  virtual ~FitnessService() = default;
  virtual const problems::ProblemSuite& suite() const = 0;
  // Reports in request order.
  virtual std::vector<eval::FitnessReport> evaluate(const std::vector<Candidate>& batch) = 0;
};

// Real training and test runs through the eval scheduler. Every candidate is
// evaluated with the same seed so fitness values are directly comparable.
class SchedulerFitness : public FitnessService {
public:
  SchedulerFitness(std::shared_ptr<const problems::ProblemSuite> suite, eval::EvalBudget budget, std::uint64_t seed,
                   int workers, std::optional<std::filesystem::path> cache_dir = std::nullopt);

  const problems::ProblemSuite& suite() const override { return *suite_; }
  std::vector<eval::FitnessReport> evaluate(const std::vector<Candidate>& batch) override;
  const eval::FitnessCache& cache() const { return *cache_; }

private:
  std::shared_ptr<const problems::ProblemSuite> suite_;
  eval::EvalBudget budget_;
  std::uint64_t seed_;
  std::unique_ptr<eval::FitnessCache> cache_;
  eval::Scheduler scheduler_;
};

// Test double: fitness from a callable, no training.
class FunctionFitness : public FitnessService {
public:
  using Fn = std::function<eval::FitnessReport(envs::TaskId, const rsl::RewardProgram&)>;
  FunctionFitness(problems::ProblemSuite suite, Fn fn) : suite_(std::move(suite)), fn_(std::move(fn)) {}

  const problems::ProblemSuite& suite() const override { return suite_; }
  std::vector<eval::FitnessReport> evaluate(const std::vector<Candidate>& batch) override;
  long calls() const { return calls_; }

private:
  problems::ProblemSuite suite_;
  Fn fn_;
  long calls_ = 0;
};

// Scheduler-backed fitness for a configuration: its suite, budget profile and
// a fitness seed derived from the run seed.
std::unique_ptr<SchedulerFitness> make_scheduler_fitness(const RunConfig& config,
                                                         std::optional<std::filesystem::path> cache_dir);

// ---- building blocks --------------------------------------------------------

// Bundled fixture offline. Online, the summarizer's c_alg and c_code replace
// it unless c_code misses a schema field or the call fails (warning, fixture).
envs::Metadata build_metadata(envs::TaskId task, llm::Provider* provider, int format_attempts = 3);

// First-draw probability of each rank under w = 1 / (rank + nominal).
std::vector<double> selection_probabilities(std::size_t pool, std::size_t nominal);

// Indices into `pool` (already in rank order) of `n` survivors drawn without
// replacement, each draw proportional to 1 / (rank + nominal).
std::vector<std::size_t> draw_survivors(std::size_t pool, std::size_t n, std::size_t nominal, Rng& rng);

// Indices of the k largest medians; ties go to the earlier instance.
std::vector<std::size_t> worst_instances(std::span<const double> medians, std::size_t k);

std::string format_fitness(double fitness);

struct RewardAnswer {
  std::string thought;
  rsl::RewardProgram program;
  int attempts = 1;  // prompt that produced the answer, 1-based
};

// Asks for an individual for `task`. Answers without code, unparseable code or
// fields outside the task schema are re-prompted with the reason, up to
// `format_attempts` prompts. Empty when all fail; `rejection` gets the last reason.
std::optional<RewardAnswer> request_reward(llm::Provider& provider, llm::TemplateId id, const llm::Variables& vars,
                                           envs::TaskId task, int format_attempts,
                                           std::string* rejection = nullptr);

// One kt_execute round trip carrying a reward over to `target`.
std::optional<RewardAnswer> adapt_reward(llm::Provider& provider, envs::TaskId source, std::string_view thought,
                                         std::string_view code, envs::TaskId target, std::string_view rationale,
                                         std::string_view strategy, int format_attempts,
                                         std::string* rejection = nullptr);

// ---- the search -------------------------------------------------------------

struct GenerationStats {
  int generation = 0;
  envs::TaskId task = envs::TaskId::DeOperatorSelection;
  double best_fitness = eval::kInvalidFitness;  // best so far
  double mean_fitness = eval::kInvalidFitness;  // over the alive population
  int offspring = 0;
  int invalid = 0;
  int skipped = 0;
  int kt_applied = 0;
};

// Holds the whole search state. LLM calls are issued one at a time in a fixed
// order and evaluations go out in batches, so a replay script and a seed
// determine every output byte.
class Discovery {
public:
  // With a run directory, artifacts and snapshots are written there and LLM
  // exchanges are logged to exchanges.jsonl.
  Discovery(RunConfig config, llm::Provider& provider, FitnessService& fitness,
            std::optional<std::filesystem::path> run_dir = std::nullopt);

  // Restores the latest snapshot of `run_dir`, truncates logs written after
  // it and fast-forwards a replay provider past the exchanges it already used.
  static std::unique_ptr<Discovery> resume(const std::filesystem::path& run_dir, llm::Provider& provider,
                                           FitnessService& fitness);

  // Generation 0: metadata and niche initialization.
  void initialize();
  // One generation: reproduction, evaluation, selection, then one transfer pass.
  void step();
  // Initializes when needed and steps until the configured generation count.
  void run();

  int generation() const { return generation_; }
  bool initialized() const { return generation_ >= 0; }
  const RunConfig& config() const { return config_; }
  const std::vector<Niche>& niches() const { return niches_; }
  const Archive& archive() const { return archive_; }
  const std::vector<TransferRecord>& history() const { return history_; }
  const std::vector<GenerationStats>& stats() const { return stats_; }
  // Individuals that failed evaluation, kept for accounting.
  const std::vector<Individual>& invalid_log() const { return invalid_; }
  long created() const { return next_id_; }
  int kt_passes() const { return kt_passes_; }
  // Operator tag of every offspring created so far, with whether it survived its generation.
  const std::vector<std::pair<OperatorTag, bool>>& offspring_outcomes() const { return outcomes_; }

  // Best individual ever recorded per niche, in niche order.
  std::vector<Individual> best_per_task() const;

  // Hooks for tests and tools: the same calls step() makes.
  Niche initialize_niche(envs::TaskId task, envs::Metadata metadata);
  std::vector<Individual> select_survivors(std::vector<Individual> pool, std::size_t n, Rng& rng,
                                           std::vector<Individual>* eliminated) const;

private:
  struct Pending {
    Individual individual;
    std::size_t niche;
  };

  struct InitOutcome {
    std::vector<Individual> born;
    std::vector<int> attempts;  // per niche
  };

  using Answer = RewardAnswer;

  std::optional<Answer> ask(llm::TemplateId id, const llm::Variables& vars, envs::TaskId task);
  std::string reflect(llm::TemplateId id, const llm::Variables& vars, std::string_view task);
  InitOutcome populate(std::vector<Niche>& niches);
  std::optional<Pending> offspring(std::size_t k, std::size_t parent, OperatorTag op, int generation,
                                   const Individual& global_best);
  const std::string& archive_summary(int generation);
  void knowledge_transfer(int generation);
  Individual make_individual(envs::TaskId task, Answer answer, Lineage lineage, int generation);

  std::uint64_t stream(std::string_view tag, int generation, std::uint64_t index) const;
  void write_generation(int generation, const std::vector<Individual>& born);
  void write_stats(int generation);
  void write_snapshot();
  void log_archive(const Individual& individual);

  RunConfig config_;
  std::optional<std::filesystem::path> run_dir_;
  std::unique_ptr<llm::RecordingProvider> recorder_;
  llm::Provider* provider_;
  FitnessService& fitness_;

  int generation_ = -1;
  long next_id_ = 0;
  int kt_passes_ = 0;
  long exchange_count_ = 0;
  std::vector<Niche> niches_;
  Archive archive_;
  std::vector<TransferRecord> history_;
  std::vector<GenerationStats> stats_;
  std::vector<Individual> invalid_;
  std::vector<std::pair<OperatorTag, bool>> outcomes_;
};

struct DiscoveryResult {
  std::vector<Niche> niches;
  std::vector<Individual> best;  // per task, in configured order
};

// Fresh run (or resume of `run_dir` when `resume` is set) to completion.
DiscoveryResult run_discovery(const RunConfig& config, llm::Provider& provider, FitnessService& fitness,
                              const std::optional<std::filesystem::path>& run_dir, bool resume = false);

}  // namespace rewardevo::evolution
