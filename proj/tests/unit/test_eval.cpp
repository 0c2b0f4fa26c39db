#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/eval/eval.hpp"

using namespace rewardevo;
using namespace rewardevo::eval;
using problems::FunctionId;

namespace {

// Brute-force oracle kept independent of aggregate_scores: full sort, explicit index.
double brute_mean_of_medians(const ScoreMatrix& m)
{
  double sum = 0.0;
  for (const auto& row : m) {
    auto sorted = row;
    std::sort(sorted.begin(), sorted.end());
    sum += sorted[(sorted.size() - 1) / 2];
  }
  return sum / static_cast<double>(m.size());
}

ScoreMatrix random_matrix(Rng& rng)
{
  ScoreMatrix m(1 + rng.below(20));
  const std::size_t runs = 1 + rng.below(60);
  for (auto& row : m) {
    row.resize(runs);
    for (auto& x : row) {
      // Mix of ties, exact zeros and values over many decades.
      const auto kind = rng.below(4);
      x = kind == 0 ? 0.0 : kind == 1 ? 1.0 : std::pow(10.0, rng.uniform(-12.0, 2.0));
    }
  }
  return m;
}

std::shared_ptr<const problems::ProblemSuite> micro_suite(std::uint64_t seed = 1)
{
  const std::array<FunctionId, 1> train{FunctionId::Sphere};
  const std::array<FunctionId, 2> test{FunctionId::Sphere, FunctionId::RastriginSeparable};
  return std::make_shared<const problems::ProblemSuite>(problems::make_custom_suite(train, test, 2, seed));
}

EvalBudget tiny_budget()
{
  EvalBudget b;
  b.gamma = 3;
  b.fe_budget = 500;
  b.training_episodes = 2;
  return b;
}

EvalJob job(std::string_view source, std::uint64_t seed, envs::TaskId task = envs::TaskId::DeOperatorSelection)
{
  return EvalJob{rsl::parse(source), envs::make_task(task), micro_suite(), tiny_budget(), seed};
}

std::filesystem::path scratch_dir(const std::string& name)
{
  auto dir = std::filesystem::temp_directory_path() / ("rewardevo_eval_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

constexpr const char* kIndicator = "return 1.0 * ctx.accepted, {}\n";

}  // namespace

TEST(NormalizedScore, WorkedExamples)
{
  EXPECT_DOUBLE_EQ(normalized_score(7.0, 7.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(normalized_score(7.0, 2.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(normalized_score(10.0, 1.0, 0.0), 0.1);
  EXPECT_EQ(normalized_score(3.0, 3.0, 3.0), 0.0);
  EXPECT_EQ(normalized_score(5.0, 1.0 - 1e-15, 1.0), 0.0);
}

TEST(Aggregation, LowerMedianForEvenCounts)
{
  const std::vector<double> even{4.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(lower_median(even), 2.0);
  const std::vector<double> one{0.25};
  EXPECT_EQ(lower_median(one), 0.25);
  EXPECT_THROW(lower_median(std::vector<double>{}), std::invalid_argument);
}

TEST(Aggregation, MatchesBruteForceOnRandomMatrices)
{
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = random_matrix(rng);
    const auto report = report_from_scores(m);
    ASSERT_NEAR(report.fitness, brute_mean_of_medians(m), 1e-12) << "trial " << trial;
    ASSERT_EQ(report.per_instance_medians.size(), m.size());
    ASSERT_EQ(report.score_matrix, m);
  }
}

TEST(Aggregation, SingleRunIsTheScoreItself)
{
  const auto report = report_from_scores({{0.3}, {0.5}});
  EXPECT_DOUBLE_EQ(report.fitness, 0.4);
  EXPECT_EQ(report.per_instance_medians, (std::vector<double>{0.3, 0.5}));
}

TEST(Report, JsonRoundTripKeepsBitsAndSentinel)
{
  Rng rng(5);
  auto report = report_from_scores(random_matrix(rng));
  report.policy_digest = "abc";
  report.budget_used = 1234;
  EXPECT_EQ(FitnessReport::from_json(Json::parse(report.to_json().dump())), report);

  FitnessReport bad;
  bad.invalid = true;
  bad.failure_reason = "boom";
  const auto back = FitnessReport::from_json(Json::parse(bad.to_json().dump()));
  EXPECT_TRUE(std::isinf(back.fitness));
  EXPECT_EQ(back, bad);
}

TEST(Budget, Profiles)
{
  EXPECT_EQ(EvalBudget::profile("search").gamma, 3);
  EXPECT_EQ(EvalBudget::profile("final").gamma, 51);
  EXPECT_THROW(EvalBudget::profile("quick"), std::invalid_argument);
  EXPECT_THROW(EvalBudget::from_json(Json{{"gamma", 0}}), std::invalid_argument);
}

TEST(Sne, ParityAndHalving)
{
  const std::vector<double> candidate{0.2, 0.7, 0.05};
  EXPECT_EQ(compute_sne(candidate, candidate), 1.0);
  std::vector<double> doubled;
  for (double r : candidate) {
    doubled.push_back(2.0 * r);
  }
  EXPECT_NEAR(compute_sne(candidate, doubled), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(compute_sne(std::vector<double>{0.3}, std::vector<double>{0.6}), 0.5);
}

TEST(Sne, RejectsUndefinedInputs)
{
  EXPECT_THROW(compute_sne(std::vector<double>{1.0}, std::vector<double>{0.0}), SneError);
  EXPECT_THROW(compute_sne(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), SneError);
  EXPECT_THROW(compute_sne(std::vector<double>{}, std::vector<double>{}), SneError);
  EXPECT_THROW(compute_sne(std::vector<double>{kInvalidFitness}, std::vector<double>{1.0}), SneError);
}

TEST(EvaluateFitness, ReportIsConsistentAndDeterministic)
{
  for (auto task : envs::kAllTasks) {
    const auto suite = micro_suite();
    const auto& reward = envs::handcrafted_reward(task);
    const auto a = evaluate_fitness(reward, envs::make_task(task), *suite, tiny_budget(), 9);
    ASSERT_FALSE(a.invalid) << a.failure_reason;
    ASSERT_EQ(a.score_matrix.size(), suite->test_instances.size());
    for (const auto& row : a.score_matrix) {
      ASSERT_EQ(row.size(), 3u);
      for (double s : row) {
        EXPECT_GE(s, 0.0);
      }
    }
    EXPECT_NEAR(a.fitness, brute_mean_of_medians(a.score_matrix), 1e-12);
    EXPECT_GT(a.budget_used, 0);
    EXPECT_EQ(a.policy_digest.size(), 64u);

    const auto b = evaluate_fitness(reward, envs::make_task(task), *suite, tiny_budget(), 9);
    EXPECT_EQ(a, b) << envs::task_key(task);
  }
}

TEST(EvaluateFitness, RewardFailureLateInAnEpisodeInvalidatesEverything)
{
  // Fails only once the episode is nearly spent.
  const auto reward = rsl::parse(
      "r = 0.0\n"
      "if ctx.progress > 0.95:\n"
      "    r = log(0.0)\n"
      "return r, {}\n");
  const auto r = evaluate_fitness(reward, envs::make_task(envs::TaskId::DeOperatorSelection), *micro_suite(),
                                  tiny_budget(), 3);
  EXPECT_TRUE(r.invalid);
  EXPECT_TRUE(std::isinf(r.fitness));
  EXPECT_TRUE(r.score_matrix.empty());
  EXPECT_NE(r.failure_reason.find("training"), std::string::npos) << r.failure_reason;
}

TEST(EvaluateFitness, SchemaMismatchIsInvalidWithoutRunning)
{
  const auto reward = rsl::parse("return ctx.gbest_val, {}\n");
  const auto r = evaluate_fitness(reward, envs::make_task(envs::TaskId::DeOperatorSelection), *micro_suite(),
                                  tiny_budget(), 3);
  EXPECT_TRUE(r.invalid);
  EXPECT_EQ(r.budget_used, 0);
  EXPECT_NE(r.failure_reason.find("gbest_val"), std::string::npos);
}

TEST(EvaluatePolicy, RandomPolicyWithoutReward)
{
  const auto suite = micro_suite();
  const auto task = envs::make_task(envs::TaskId::AlgorithmSelection);
  const auto r = evaluate_policy(task, envs::random_policy(task.id), nullptr, suite->test_instances, tiny_budget(), 4);
  EXPECT_FALSE(r.invalid);
  EXPECT_EQ(r.budget_used, 2 * 3 * 500);
  EXPECT_LT(r.fitness, 1.0);
}

TEST(CacheKey, SensitiveToEveryInput)
{
  const auto base = job(kIndicator, 1);
  const auto key = [](const EvalJob& j) { return cache_key(j.reward, j.task, *j.suite, j.budget, j.seed); };
  const auto k0 = key(base);
  EXPECT_EQ(k0, key(job("return 1.0*ctx.accepted , {}  # same program\n", 1)));

  auto other = base;
  other.seed = 2;
  EXPECT_NE(key(other), k0);
  other = base;
  other.budget.gamma = 5;
  EXPECT_NE(key(other), k0);
  other = base;
  other.task.policy.epsilon = 0.2;
  EXPECT_NE(key(other), k0);
  other = base;
  other.suite = micro_suite(2);
  EXPECT_NE(key(other), k0);
  EXPECT_NE(key(job("return 2.0 * ctx.accepted, {}\n", 1)), k0);
}

TEST(FitnessCache, FirstInsertWinsAndPersists)
{
  const auto dir = scratch_dir("persist");
  Rng rng(8);
  const auto report = report_from_scores(random_matrix(rng));
  {
    FitnessCache cache(dir);
    EXPECT_FALSE(cache.get("k1"));
    cache.put("k1", report);
    cache.put("k1", report_from_scores({{0.9}}));
    EXPECT_EQ(cache.get("k1"), report);
    EXPECT_EQ(cache.hits(), 1);
    EXPECT_EQ(cache.misses(), 1);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "k1.json"));
  FitnessCache reopened(dir);
  EXPECT_EQ(reopened.get("k1"), report);
  std::filesystem::remove_all(dir);
}

TEST(FitnessCache, HitsAreBitIdenticalToRecomputation)
{
  // Cache-bypass audit: a random subset of jobs is recomputed from scratch.
  const auto dir = scratch_dir("audit");
  FitnessCache cache(dir);
  Scheduler scheduler(4, &cache);
  std::vector<EvalJob> jobs;
  for (std::uint64_t s = 0; s < 6; ++s) {
    jobs.push_back(job(s % 2 ? kIndicator : "return ctx.delta_cost / (abs(ctx.parent_cost) + 1.0), {}\n", s));
  }
  const auto first = scheduler.run(jobs);
  FitnessCache reloaded(dir);
  Rng rng(77);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!rng.bernoulli(0.5)) {
      continue;
    }
    const auto& j = jobs[i];
    const auto hit = reloaded.get(cache_key(j.reward, j.task, *j.suite, j.budget, j.seed));
    ASSERT_TRUE(hit);
    EXPECT_EQ(*hit, evaluate_job(j));
    EXPECT_EQ(*hit, first[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST(Scheduler, WorkerCountDoesNotChangeReports)
{
  std::vector<EvalJob> jobs;
  for (std::uint64_t s = 0; s < 25; ++s) {
    const auto task = envs::kAllTasks[s % 3];
    jobs.push_back(EvalJob{envs::handcrafted_reward(task), envs::make_task(task), micro_suite(s % 2), tiny_budget(), s});
  }
  const auto serial = Scheduler(1).run(jobs);
  const auto parallel = Scheduler(8).run(jobs);
  ASSERT_EQ(serial.size(), 25u);
  EXPECT_EQ(serial, parallel);
}

TEST(Scheduler, DuplicateJobsRunOnceAndShareTheResult)
{
  std::atomic<int> calls{0};
  Scheduler scheduler(4, nullptr, [&](const EvalJob& j) {
    ++calls;
    return report_from_scores({{static_cast<double>(j.seed)}});
  });
  const auto out = scheduler.run({job(kIndicator, 1), job(kIndicator, 2), job(kIndicator, 1)});
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(out[0], out[2]);
  EXPECT_EQ(out[1].fitness, 2.0);
}

TEST(Scheduler, StressBatchKeepsRequestOrder)
{
  Scheduler scheduler(4, nullptr, [](const EvalJob& j) {
    // Uneven job lengths shuffle completion order.
    std::this_thread::sleep_for(std::chrono::microseconds((j.seed * 7919) % 3000));
    return report_from_scores({{static_cast<double>(j.seed)}});
  });
  std::vector<EvalJob> jobs;
  for (std::uint64_t s = 0; s < 25; ++s) {
    jobs.push_back(job(kIndicator, s));
  }
  const auto out = scheduler.run(jobs);
  ASSERT_EQ(out.size(), 25u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].fitness, static_cast<double>(i));
  }
}

TEST(Scheduler, CrashIsRetriedOnceThenSurfaced)
{
  std::mutex mu;
  std::map<std::uint64_t, int> attempts;
  FitnessCache cache;
  Scheduler scheduler(3, &cache, [&](const EvalJob& j) {
    int n = 0;
    {
      std::lock_guard lock(mu);
      n = ++attempts[j.seed];
    }
    // Seed 0 always crashes; others crash on the first attempt only.
    if (j.seed == 0 || n == 1) {
      throw std::runtime_error("worker lost");
    }
    return report_from_scores({{0.5}});
  });
  const auto out = scheduler.run({job(kIndicator, 0), job(kIndicator, 1), job(kIndicator, 2)});
  EXPECT_TRUE(out[0].infrastructure_failure);
  EXPECT_TRUE(out[0].invalid);
  EXPECT_NE(out[0].failure_reason.find("worker lost"), std::string::npos);
  EXPECT_FALSE(out[1].invalid);
  EXPECT_FALSE(out[2].invalid);
  EXPECT_EQ(attempts[0], 2);
  EXPECT_EQ(attempts[1], 2);
  EXPECT_EQ(scheduler.executed(), 6);
  EXPECT_EQ(cache.size(), 2u);  // the failure is not cached
}

TEST(Scheduler, CacheServesRepeatBatches)
{
  FitnessCache cache;
  std::atomic<int> calls{0};
  Scheduler scheduler(2, &cache, [&](const EvalJob& j) {
    ++calls;
    return report_from_scores({{static_cast<double>(j.seed)}});
  });
  const std::vector<EvalJob> jobs{job(kIndicator, 1), job(kIndicator, 2)};
  const auto a = scheduler.run(jobs);
  const auto b = scheduler.run(jobs);
  EXPECT_EQ(a, b);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(cache.hits(), 2);
}

TEST(Scheduler, WorkerOverrideFromEnvironment)
{
  ::unsetenv("REWARDEVO_WORKERS");
  EXPECT_EQ(resolve_worker_count(3), 3);
  EXPECT_GE(resolve_worker_count(0), 1);
  ::setenv("REWARDEVO_WORKERS", "6", 1);
  EXPECT_EQ(resolve_worker_count(3), 6);
  ::setenv("REWARDEVO_WORKERS", "many", 1);
  EXPECT_EQ(resolve_worker_count(3), 3);
  ::unsetenv("REWARDEVO_WORKERS");
}
