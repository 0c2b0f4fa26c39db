#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rewardevo/core/json.hpp"
#include "rewardevo/problems/bbob.hpp"

using namespace rewardevo;
using namespace rewardevo::problems;

namespace {

std::vector<FunctionId> all_families()
{
  std::vector<FunctionId> out;
  for (int i = 1; i <= kFunctionCount; ++i) {
    out.push_back(static_cast<FunctionId>(i));
  }
  return out;
}

std::vector<double> random_point(Rng& rng, int dim, double lo, double hi)
{
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (double& e : x) {
    e = rng.uniform(lo, hi);
  }
  return x;
}

// Hand-applied oscillation transform, written independently of the library.
double oracle_tosz(double v)
{
  if (v == 0.0) {
    return 0.0;
  }
  const double h = std::log(std::fabs(v));
  if (v > 0) {
    return std::exp(h + 0.049 * (std::sin(10.0 * h) + std::sin(7.9 * h)));
  }
  return -std::exp(h + 0.049 * (std::sin(5.5 * h) + std::sin(3.1 * h)));
}

}  // namespace

TEST(Problems, OptimumEvaluatesToOptimumValueForEveryFamily)
{
  for (FunctionId id : all_families()) {
    for (int dim : {2, 3, 5, 10, 20}) {
      for (std::uint64_t seed : {1ULL, 77ULL, 123456789ULL}) {
        ProblemInstance p(id, dim, seed);
        EXPECT_NEAR(p.evaluate(p.optimum_point()), p.optimum_value(), 1e-9)
            << p.name() << " dim=" << dim << " seed=" << seed;
      }
    }
  }
}

TEST(Problems, OptimumPointLiesInsideBounds)
{
  for (FunctionId id : all_families()) {
    ProblemInstance p(id, 10, 42);
    for (double e : p.optimum_point()) {
      EXPECT_LE(std::abs(e), 5.0) << p.name();
    }
  }
}

TEST(Problems, ValuesAreFiniteAndAboveOptimumInsideBounds)
{
  Rng rng(9);
  for (FunctionId id : all_families()) {
    for (int dim : {2, 10}) {
      ProblemInstance p(id, dim, 2024);
      for (int k = 0; k < 300; ++k) {
        const auto x = random_point(rng, dim, -5.0, 5.0);
        const double v = p.evaluate(x);
        ASSERT_TRUE(std::isfinite(v)) << p.name();
        EXPECT_GE(v, p.optimum_value() - 1e-9) << p.name();
      }
    }
  }
}

TEST(Problems, PenalizedFamiliesStayAboveOptimumOutsideBounds)
{
  const std::set<FunctionId> penalized{
      FunctionId::BucheRastrigin,    FunctionId::StepEllipsoidal,   FunctionId::Weierstrass,
      FunctionId::SchaffersF7,       FunctionId::SchaffersHighCond, FunctionId::Schwefel,
      FunctionId::Gallagher101Peaks, FunctionId::Gallagher21Peaks,  FunctionId::Katsuura,
      FunctionId::LunacekBiRastrigin,
  };
  Rng rng(31);
  for (FunctionId id : penalized) {
    ProblemInstance p(id, 6, 5);
    for (int k = 0; k < 300; ++k) {
      auto x = random_point(rng, 6, -5.0, 5.0);
      const auto coord = static_cast<std::size_t>(rng.below(6));
      x[coord] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(5.0, 12.0);
      EXPECT_GE(p.evaluate(x), p.optimum_value() - 1e-9) << p.name();
    }
  }
}

TEST(Problems, EvaluationIsBitIdenticalAcrossCallsAndCopies)
{
  Rng rng(3);
  for (FunctionId id : all_families()) {
    ProblemInstance a(id, 7, 99);
    ProblemInstance b(id, 7, 99);
    const auto x = random_point(rng, 7, -5.0, 5.0);
    const double v = a.evaluate(x);
    EXPECT_EQ(v, a.evaluate(x));
    EXPECT_EQ(v, b.evaluate(x));
  }
}

TEST(Problems, DimensionMismatchIsAContractViolation)
{
  ProblemInstance p(FunctionId::Sphere, 4, 1);
  std::vector<double> x(3, 0.0);
  EXPECT_THROW(p.evaluate(x), ContractViolation);
  EXPECT_THROW(ProblemInstance(FunctionId::Sphere, 1, 1), ContractViolation);
}

TEST(Problems, UnshiftedSphereIsSquaredDistance)
{
  ProblemInstance p(FunctionId::Sphere, 5, 11, InstanceOptions{.shifted = false, .optimum_value = 0.0});
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    auto dir = random_point(rng, 5, -1.0, 1.0);
    double norm = 0.0;
    for (double e : dir) {
      norm += e * e;
    }
    norm = std::sqrt(norm);
    const double r = rng.uniform(0.0, 4.0);
    for (double& e : dir) {
      e *= r / norm;
    }
    EXPECT_NEAR(p.evaluate(dir), r * r, 1e-12);
  }
}

TEST(Problems, DiscusMatchesHandAppliedFormula)
{
  ProblemInstance p(FunctionId::Discus, 3, 20240611);
  auto x = p.optimum_point();
  x[0] += 1.0;
  // R (x - x_opt) with x - x_opt = e_1 selects the first column of R.
  const auto& r = p.rotation_r();
  const double z0 = oracle_tosz(r[0 * 3 + 0]);
  const double z1 = oracle_tosz(r[1 * 3 + 0]);
  const double z2 = oracle_tosz(r[2 * 3 + 0]);
  const double expected = 1.0e6 * z0 * z0 + z1 * z1 + z2 * z2 + p.optimum_value();
  EXPECT_NEAR(p.evaluate(x), expected, 1e-9 * std::max(1.0, std::abs(expected)));
}

TEST(Problems, RotationsAreOrthogonal)
{
  for (int dim : {2, 5, 12}) {
    ProblemInstance p(FunctionId::EllipsoidalHighCond, dim, 8);
    for (const auto* m : {&p.rotation_r(), &p.rotation_q()}) {
      const auto n = static_cast<std::size_t>(dim);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            dot += (*m)[i * n + k] * (*m)[j * n + k];
          }
          EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
        }
      }
    }
  }
}

TEST(Problems, SphereIsTranslationInvariant)
{
  const std::vector<double> d{0.3, -1.2, 0.7, 2.0};
  ProblemInstance a(FunctionId::Sphere, 4, 1);
  ProblemInstance b(FunctionId::Sphere, 4, 2);
  auto xa = a.optimum_point();
  auto xb = b.optimum_point();
  for (std::size_t i = 0; i < d.size(); ++i) {
    xa[i] += d[i];
    xb[i] += d[i];
  }
  EXPECT_NEAR(a.evaluate(xa) - a.optimum_value(), b.evaluate(xb) - b.optimum_value(), 1e-12);
}

TEST(Problems, DistinctSeedsGiveDistinctOptima)
{
  for (std::uint64_t k = 0; k < 100; ++k) {
    ProblemInstance a(FunctionId::Discus, 10, 2 * k + 1);
    ProblemInstance b(FunctionId::Discus, 10, 2 * k + 2);
    EXPECT_NE(a.optimum_point(), b.optimum_point());
    const auto again = ProblemInstance(FunctionId::Discus, 10, 2 * k + 1);
    EXPECT_EQ(a.optimum_point(), again.optimum_point());
    EXPECT_EQ(a.optimum_value(), again.optimum_value());
  }
}

TEST(Suite, SplitSizesAndDisjointness)
{
  const auto suite = make_suite(10, 7);
  ASSERT_EQ(suite.train_instances.size(), 8u);
  ASSERT_EQ(suite.test_instances.size(), 16u);
  std::set<FunctionId> train;
  for (const auto& p : suite.train_instances) {
    train.insert(p.function_id());
  }
  bool has_step = false;
  for (const auto& p : suite.test_instances) {
    EXPECT_FALSE(train.contains(p.function_id()));
    has_step = has_step || p.name() == "Step Ellipsoidal";
  }
  EXPECT_TRUE(has_step);
}

TEST(Suite, SameSeedSameSuite)
{
  EXPECT_EQ(suite_manifest(make_suite(10, 7)), suite_manifest(make_suite(10, 7)));
  EXPECT_EQ(suite_digest(make_suite(10, 7)), suite_digest(make_suite(10, 7)));
  EXPECT_NE(suite_digest(make_suite(10, 7)), suite_digest(make_suite(10, 8)));
  EXPECT_NE(suite_digest(make_suite(10, 7)), suite_digest(make_suite(5, 7)));
}

TEST(Suite, SplitMatchesGoldenFixture)
{
  const Json golden = read_json_file(REWARDEVO_TEST_DATA_DIR "/suite_split.json");
  const auto suite = make_suite(10, 1);
  auto check = [](const Json& expected, const std::vector<ProblemInstance>& actual) {
    ASSERT_EQ(expected.size(), actual.size());
    for (std::size_t i = 0; i < actual.size(); ++i) {
      EXPECT_EQ(expected[i]["function_id"].get<int>(), static_cast<int>(actual[i].function_id()));
      EXPECT_EQ(expected[i]["name"].get<std::string>(), actual[i].name());
    }
  };
  check(golden["train"], suite.train_instances);
  check(golden["test"], suite.test_instances);
}

TEST(Suite, ManifestListsEveryInstance)
{
  const auto manifest = suite_manifest(make_suite(6, 3));
  ASSERT_EQ(manifest.size(), 24u);
  for (const auto& e : manifest) {
    EXPECT_EQ(e["dimension"].get<int>(), 6);
    EXPECT_TRUE(e.contains("instance_seed"));
    EXPECT_TRUE(e.contains("optimum_value"));
  }
}

TEST(Suite, KeysRoundTrip)
{
  for (FunctionId id : all_families()) {
    EXPECT_EQ(function_from_key(function_key(id)), id);
    EXPECT_FALSE(function_characteristics(id).empty());
  }
  EXPECT_FALSE(function_from_key("not-a-function").has_value());
}
