#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rewardevo/core/json.hpp"
#include "rewardevo/problems/bbob.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::envs {

enum class TaskId { DeOperatorSelection, PsoParameterControl, AlgorithmSelection };

inline constexpr std::array<TaskId, 3> kAllTasks{TaskId::DeOperatorSelection, TaskId::PsoParameterControl,
                                                 TaskId::AlgorithmSelection};

std::string_view task_key(TaskId id);
// Short name of the originating MetaBBO method: DEDQN, RLEPSO, RLDAS.
std::string_view task_alias(TaskId id);
// Accepts the task key or its alias, case-insensitively for aliases.
std::optional<TaskId> find_task(std::string_view name);
// Throws std::invalid_argument for unknown names.
TaskId task_from_key(std::string_view name);

enum class LearnerKind { QTable, LinearEs, Random };

std::string_view learner_key(LearnerKind kind);
LearnerKind learner_from_key(std::string_view key);

struct OptimizerConfig {
  int population_size = 50;
  long max_fes = 5000;
  long decision_interval = 1;  // FEs between reward emissions (algorithm selection only)
  int groups = 1;              // PSO sub-swarms
};

struct PolicyConfig {
  LearnerKind learner = LearnerKind::QTable;
  double learning_rate = 0.1;
  double epsilon = 0.1;
  double gamma = 0.9;
  int training_episodes = 20;
  int es_offspring = 4;
  double es_sigma = 0.3;
  double pool_strength = 5000.0;  // Q-table: pseudo-count of the cross-state pooled estimate
};

struct MetaTask {
  TaskId id = TaskId::DeOperatorSelection;
  OptimizerConfig optimizer;
  PolicyConfig policy;
  std::string metadata_path;  // key in the embedded data catalog
};

MetaTask make_task(TaskId id);

// Discrete action count, or 0 for the continuous PSO task.
int action_count(TaskId id);
// Length of the action vector: 1 for discrete tasks, 35 for PSO.
int action_length(TaskId id);

struct Metadata {
  std::string task_id;
  std::string c_alg;
  rsl::FieldDictionary c_code;

  Json to_json() const;
  static Metadata from_json(const Json& j);
};

// Bundled metadata fixture. Throws std::out_of_range when it is missing.
const Metadata& load_task_metadata(TaskId id);

// Field dictionary of the task (the schema every reward program is validated against).
const rsl::FieldDictionary& task_schema(TaskId id);

// Keyed per-emission record a reward program reads. An optional filter limits
// construction to the fields a program references.
class RewardContext : public rsl::FieldSource {
public:
  explicit RewardContext(const std::set<std::string>* filter = nullptr) : filter_(filter) {}

  bool wants(std::string_view key) const { return filter_ == nullptr || filter_->contains(std::string(key)); }
  void set(std::string_view key, rsl::Value value);
  void clear() { fields_.clear(); }
  const rsl::Value* find(std::string_view path) const override;
  const std::map<std::string, rsl::Value, std::less<>>& fields() const { return fields_; }
  Json to_json() const;

private:
  const std::set<std::string>* filter_;
  std::map<std::string, rsl::Value, std::less<>> fields_;
};

struct PolicyState {
  LearnerKind kind = LearnerKind::Random;
  TaskId task = TaskId::DeOperatorSelection;
  std::vector<double> q;        // QTable: kQStates x actions, row-major
  std::vector<double> visits;   // QTable: update count per entry, same layout as q
  std::vector<double> weights;  // LinearEs: 35 x kPolicyFeatures, row-major
  double epsilon = 0.0;
  double learning_rate = 0.0;
  double gamma = 0.0;
  double pool_strength = 0.0;
  long training_step = 0;
  double training_progress = 0.0;

  Json to_json() const;
  static PolicyState from_json(const Json& j);
  bool operator==(const PolicyState&) const = default;
};

inline constexpr int kQStates = 30;  // 5 progress bins x 2 improvement flags x 3 diversity bins
inline constexpr int kPolicyFeatures = 6;

// Untrained policy of the task's configured learner (zero parameters).
PolicyState initial_policy(const MetaTask& task);
PolicyState random_policy(TaskId id);

enum class Mode { Learning, Frozen };

struct StepRecord {
  long step = 0;
  std::vector<double> action;
  std::optional<double> reward;
  double gbest = 0.0;
};

struct EpisodeLog {
  std::string instance_id;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  double y_initial = 0.0;
  double y_final = 0.0;
  long fe_used = 0;
  bool invalid_reward = false;
  std::string error;

  Json to_json() const;
};

struct EpisodeOptions {
  Mode mode = Mode::Frozen;
  bool record_steps = true;
  // Called with the full (unfiltered) context at every emission point.
  std::function<void(const RewardContext&)> on_context;
  // Step-budget and numeric limits for reward evaluation.
  rsl::EvalLimits limits;
};

// Runs one optimizer episode on `instance`. With a null reward no reward is
// computed (frozen evaluation). In learning mode tabular policies are updated
// online. Throws problems::ContractViolation for an invalid budget.
EpisodeLog run_episode(const MetaTask& task, PolicyState& policy, const rsl::RewardProgram* reward,
                       const problems::ProblemInstance& instance, std::uint64_t seed, long fe_budget,
                       const EpisodeOptions& options = {});

struct TrainingBudget {
  int episodes = 20;
  long fe_budget = 5000;
};

struct TrainingOutcome {
  PolicyState policy;
  bool invalid_reward = false;
  std::string error;
  int episodes_run = 0;
  long fe_used = 0;
};

// Trains the task's learner with `reward` on the training instances, cycling
// through them. Deterministic given the seed.
TrainingOutcome train_policy(const MetaTask& task, const rsl::RewardProgram& reward,
                             std::span<const problems::ProblemInstance> train, TrainingBudget budget,
                             std::uint64_t seed, const rsl::EvalLimits& limits = {});

// Expert reward of the original method, used as the anchor individual.
const rsl::RewardProgram& handcrafted_reward(TaskId id);
// Transcribed rewards reported for each method, kept as conformance fixtures.
const rsl::RewardProgram& discovered_reward(TaskId id);

}  // namespace rewardevo::envs
