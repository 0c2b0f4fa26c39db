#include <algorithm>
#include <cmath>

#include "rewardevo/core/digest.hpp"
#include "rewardevo/core/rng.hpp"
#include "rewardevo/eval/eval.hpp"

namespace rewardevo::eval {

EvalBudget EvalBudget::profile(std::string_view name)
{
  EvalBudget b;
  if (name == "search") {
    b.gamma = 3;
  } else if (name == "final") {
    b.gamma = 51;
  } else {
    throw std::invalid_argument("unknown budget profile: " + std::string(name));
  }
  return b;
}

Json EvalBudget::to_json() const
{
  return Json{{"gamma", gamma}, {"fe_budget", fe_budget}, {"training_episodes", training_episodes}};
}

EvalBudget EvalBudget::from_json(const Json& j)
{
  EvalBudget b;
  b.gamma = j.value("gamma", b.gamma);
  b.fe_budget = j.value("fe_budget", b.fe_budget);
  b.training_episodes = j.value("training_episodes", b.training_episodes);
  if (b.gamma < 1) {
    throw std::invalid_argument("gamma must be at least 1");
  }
  return b;
}

Json FitnessReport::to_json() const
{
  // JSON has no infinity; the invalid sentinel is written as null.
  return Json{{"schema_version", kReportSchemaVersion},
              {"fitness", std::isfinite(fitness) ? Json(fitness) : Json(nullptr)},
              {"score_matrix", score_matrix},
              {"per_instance_medians", per_instance_medians},
              {"policy_digest", policy_digest},
              {"budget_used", budget_used},
              {"invalid", invalid},
              {"failure_reason", failure_reason},
              {"infrastructure_failure", infrastructure_failure}};
}

FitnessReport FitnessReport::from_json(const Json& j)
{
  if (j.value("schema_version", 0) != kReportSchemaVersion) {
    throw std::invalid_argument("unsupported fitness report schema version");
  }
  FitnessReport r;
  const auto& f = j.at("fitness");
  r.fitness = f.is_null() ? kInvalidFitness : f.get<double>();
  r.score_matrix = j.at("score_matrix").get<ScoreMatrix>();
  r.per_instance_medians = j.at("per_instance_medians").get<std::vector<double>>();
  r.policy_digest = j.at("policy_digest").get<std::string>();
  r.budget_used = j.at("budget_used").get<long>();
  r.invalid = j.at("invalid").get<bool>();
  r.failure_reason = j.at("failure_reason").get<std::string>();
  r.infrastructure_failure = j.value("infrastructure_failure", false);
  return r;
}

double normalized_score(double y_initial, double y_final, double y_star)
{
  const double range = y_initial - y_star;
  if (range == 0.0) {
    return 0.0;
  }
  return std::max(0.0, (y_final - y_star) / range);
}

double lower_median(std::span<const double> xs)
{
  if (xs.empty()) {
    throw std::invalid_argument("median of an empty sequence");
  }
  std::vector<double> v(xs.begin(), xs.end());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double aggregate_scores(const ScoreMatrix& scores, std::vector<double>* medians)
{
  if (scores.empty()) {
    throw std::invalid_argument("score matrix has no instances");
  }
  if (medians != nullptr) {
    medians->clear();
  }
  double total = 0.0;
  for (const auto& row : scores) {
    const double m = lower_median(row);
    total += m;
    if (medians != nullptr) {
      medians->push_back(m);
    }
  }
  return total / static_cast<double>(scores.size());
}

FitnessReport report_from_scores(ScoreMatrix scores)
{
  FitnessReport r;
  r.fitness = aggregate_scores(scores, &r.per_instance_medians);
  r.score_matrix = std::move(scores);
  return r;
}

namespace {

std::string policy_digest(const envs::PolicyState& policy) { return sha256_hex(policy.to_json().dump()); }

FitnessReport invalid_report(std::string reason, long budget_used, std::string digest = {})
{
  FitnessReport r;
  r.invalid = true;
  r.failure_reason = std::move(reason);
  r.budget_used = budget_used;
  r.policy_digest = std::move(digest);
  return r;
}

Json task_fingerprint(const envs::MetaTask& task)
{
  const auto& o = task.optimizer;
  const auto& p = task.policy;
  return Json{{"task", envs::task_key(task.id)},
              {"schema", sha256_hex(envs::load_task_metadata(task.id).to_json().dump())},
              {"optimizer", {o.population_size, o.max_fes, o.decision_interval, o.groups}},
              {"policy",
               {envs::learner_key(p.learner), p.learning_rate, p.epsilon, p.gamma, p.training_episodes,
                p.es_offspring, p.es_sigma, p.pool_strength}}};
}

}  // namespace

FitnessReport evaluate_policy(const envs::MetaTask& task, const envs::PolicyState& policy,
                              const rsl::RewardProgram* reward, std::span<const problems::ProblemInstance> test,
                              const EvalBudget& budget, std::uint64_t seed)
{
  if (budget.gamma < 1) {
    throw std::invalid_argument("gamma must be at least 1");
  }
  if (test.empty()) {
    throw problems::ContractViolation("evaluation needs at least one test instance");
  }
  envs::EpisodeOptions opts;
  opts.mode = envs::Mode::Frozen;
  opts.record_steps = false;

  const std::string digest = policy_digest(policy);
  ScoreMatrix scores;
  scores.reserve(test.size());
  long used = 0;
  for (const auto& inst : test) {
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(budget.gamma));
    for (int j = 0; j < budget.gamma; ++j) {
      envs::PolicyState p = policy;
      const auto log = envs::run_episode(task, p, reward, inst, seed + static_cast<std::uint64_t>(j), budget.fe_budget,
                                         opts);
      used += log.fe_used;
      if (log.invalid_reward) {
        return invalid_report("reward failed on " + inst.name() + ": " + log.error, used, digest);
      }
      row.push_back(normalized_score(log.y_initial, log.y_final, inst.optimum_value()));
    }
    scores.push_back(std::move(row));
  }
  FitnessReport r = report_from_scores(std::move(scores));
  r.policy_digest = digest;
  r.budget_used = used;
  return r;
}

FitnessReport evaluate_fitness(const rsl::RewardProgram& reward, const envs::MetaTask& task,
                               const problems::ProblemSuite& suite, const EvalBudget& budget, std::uint64_t seed)
{
  if (const auto missing = rsl::validate(reward, envs::task_schema(task.id)); !missing.empty()) {
    std::string names;
    for (const auto& m : missing) {
      names += (names.empty() ? "" : ", ") + m;
    }
    return invalid_report("fields not in the task schema: " + names, 0);
  }
  const auto trained = envs::train_policy(task, reward, suite.train_instances,
                                          {budget.training_episodes, budget.fe_budget}, derive_seed(seed, "train"));
  if (trained.invalid_reward) {
    return invalid_report("reward failed during training: " + trained.error, trained.fe_used,
                          policy_digest(trained.policy));
  }
  FitnessReport r = evaluate_policy(task, trained.policy, &reward, suite.test_instances, budget, seed);
  r.budget_used += trained.fe_used;
  return r;
}

double compute_sne(std::span<const double> candidate, std::span<const double> baseline)
{
  if (candidate.size() != baseline.size()) {
    throw SneError("score vectors differ in length");
  }
  if (candidate.empty()) {
    throw SneError("no tasks to compare");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < candidate.size(); ++k) {
    if (!std::isfinite(candidate[k]) || !std::isfinite(baseline[k])) {
      throw SneError("non-finite score for task " + std::to_string(k));
    }
    if (baseline[k] == 0.0) {
      throw SneError("zero baseline score for task " + std::to_string(k));
    }
    total += candidate[k] / baseline[k];
  }
  return total / static_cast<double>(candidate.size());
}

std::string cache_key(const rsl::RewardProgram& reward, const envs::MetaTask& task,
                      const problems::ProblemSuite& suite, const EvalBudget& budget, std::uint64_t seed)
{
  const Json key{{"report_schema", kReportSchemaVersion},
                 {"reward", rsl::canonical_hash(reward)},
                 {"task", task_fingerprint(task)},
                 {"suite", problems::suite_digest(suite)},
                 {"budget", budget.to_json()},
                 {"seed", seed}};
  return sha256_hex(key.dump());
}

}  // namespace rewardevo::eval
