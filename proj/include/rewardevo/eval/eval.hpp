#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rewardevo/core/json.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/problems/bbob.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::eval {

inline constexpr int kReportSchemaVersion = 1;

// Fitness given to rewards that fail; lower is better, so invalid rewards
// never win a comparison.
inline constexpr double kInvalidFitness = std::numeric_limits<double>::infinity();

struct EvalBudget {
  int gamma = 3;  // independent test runs per instance
  long fe_budget = 5000;
  int training_episodes = 20;

  // "search" (3 runs) or "final" (51 runs). Throws std::invalid_argument otherwise.
  static EvalBudget profile(std::string_view name);

  Json to_json() const;
  static EvalBudget from_json(const Json& j);
  bool operator==(const EvalBudget&) const = default;
};

// Rows are test instances, columns the runs.
using ScoreMatrix = std::vector<std::vector<double>>;

struct FitnessReport {
  double fitness = kInvalidFitness;
  ScoreMatrix score_matrix;
  std::vector<double> per_instance_medians;
  std::string policy_digest;
  long budget_used = 0;
  bool invalid = false;
  std::string failure_reason;
  // Set when the evaluation itself broke (not the reward); such reports are never cached.
  bool infrastructure_failure = false;

  Json to_json() const;
  static FitnessReport from_json(const Json& j);
  bool operator==(const FitnessReport&) const = default;
};

// (y_final - y_star) / (y_initial - y_star), 0 when y_initial == y_star.
// Rounding below the optimum is clamped so scores stay non-negative.
double normalized_score(double y_initial, double y_final, double y_star);

// Lower-middle element for even sizes. Throws std::invalid_argument on empty input.
double lower_median(std::span<const double> xs);

// Mean over rows of the per-row median. Fills `medians` when given.
double aggregate_scores(const ScoreMatrix& scores, std::vector<double>* medians = nullptr);

// Report carrying only the aggregation of an externally produced score matrix.
FitnessReport report_from_scores(ScoreMatrix scores);

// Frozen-mode test phase: gamma runs per test instance with seeds seed + j.
// A non-null reward is evaluated on every context so runtime errors surface.
FitnessReport evaluate_policy(const envs::MetaTask& task, const envs::PolicyState& policy,
                              const rsl::RewardProgram* reward, std::span<const problems::ProblemInstance> test,
                              const EvalBudget& budget, std::uint64_t seed);

// Trains the task's learner with the reward on the train instances, then runs
// the test phase. Reward failures give an invalid report; other exceptions propagate.
FitnessReport evaluate_fitness(const rsl::RewardProgram& reward, const envs::MetaTask& task,
                               const problems::ProblemSuite& suite, const EvalBudget& budget, std::uint64_t seed);

class SneError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Mean over tasks of candidate[k] / baseline[k]. Throws SneError on size mismatch,
// empty input, non-finite scores or a zero baseline.
double compute_sne(std::span<const double> candidate, std::span<const double> baseline);

// Digest of every input that determines a report.
std::string cache_key(const rsl::RewardProgram& reward, const envs::MetaTask& task,
                      const problems::ProblemSuite& suite, const EvalBudget& budget, std::uint64_t seed);

// Content-addressed report store. With a directory, entries persist as
// <dir>/<key>.json and are loaded lazily.
class FitnessCache {
public:
  FitnessCache() = default;
  explicit FitnessCache(std::filesystem::path dir);

  std::optional<FitnessReport> get(const std::string& key) const;
  // First insertion wins; later inserts for the same key are ignored.
  void put(const std::string& key, const FitnessReport& report);

  std::size_t size() const;
  long hits() const;
  long misses() const;

private:
  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  mutable std::map<std::string, FitnessReport, std::less<>> entries_;
  mutable std::atomic<long> hits_{0};
  mutable std::atomic<long> misses_{0};
};

struct EvalJob {
  rsl::RewardProgram reward;
  envs::MetaTask task;
  std::shared_ptr<const problems::ProblemSuite> suite;
  EvalBudget budget;
  std::uint64_t seed = 0;
};

using Evaluator = std::function<FitnessReport(const EvalJob&)>;

FitnessReport evaluate_job(const EvalJob& job);

// Worker count from REWARDEVO_WORKERS when set to a positive integer, else `requested`
// (hardware concurrency when `requested` <= 0).
int resolve_worker_count(int requested);

class Scheduler {
public:
  explicit Scheduler(int workers, FitnessCache* cache = nullptr, Evaluator evaluator = evaluate_job);

  // Reports in request order. Duplicate keys run once. A job whose evaluator
  // throws is retried once, then reported as an infrastructure failure.
  std::vector<FitnessReport> run(const std::vector<EvalJob>& jobs);

  int workers() const { return workers_; }
  long executed() const { return executed_; }

private:
  int workers_;
  FitnessCache* cache_;
  Evaluator evaluator_;
  long executed_ = 0;
};

}  // namespace rewardevo::eval
