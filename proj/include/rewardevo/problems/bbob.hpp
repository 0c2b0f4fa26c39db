#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rewardevo/core/json.hpp"
#include "rewardevo/core/rng.hpp"

namespace rewardevo::problems {

// Caller broke a documented precondition (e.g. wrong point length).
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

// Noiseless BBOB families, numbered as in the benchmark definition.
enum class FunctionId : int {
  Sphere = 1,
  EllipsoidalSeparable = 2,
  RastriginSeparable = 3,
  BucheRastrigin = 4,
  LinearSlope = 5,
  AttractiveSector = 6,
  StepEllipsoidal = 7,
  RosenbrockOriginal = 8,
  RosenbrockRotated = 9,
  EllipsoidalHighCond = 10,
  Discus = 11,
  BentCigar = 12,
  SharpRidge = 13,
  DifferentPowers = 14,
  RastriginMultimodal = 15,
  Weierstrass = 16,
  SchaffersF7 = 17,
  SchaffersHighCond = 18,
  CompositeGriewankRosenbrock = 19,
  Schwefel = 20,
  Gallagher101Peaks = 21,
  Gallagher21Peaks = 22,
  Katsuura = 23,
  LunacekBiRastrigin = 24,
};

inline constexpr int kFunctionCount = 24;

std::string_view function_name(FunctionId id);
std::string_view function_key(FunctionId id);  // snake_case identifier
std::optional<FunctionId> function_from_key(std::string_view key);

// Short description of the landscape, used when explaining failure cases.
std::string_view function_characteristics(FunctionId id);

struct InstanceOptions {
  bool shifted = true;                  // false pins x_opt at the origin where the family allows it
  std::optional<double> optimum_value;  // overrides the seeded f_opt
};

// Immutable after construction; evaluate() is pure and thread-safe.
class ProblemInstance {
public:
  static constexpr double kLowerBound = -5.0;
  static constexpr double kUpperBound = 5.0;

  ProblemInstance(FunctionId id, int dimension, std::uint64_t instance_seed,
                  InstanceOptions options = {});

  double evaluate(std::span<const double> x) const;

  FunctionId function_id() const { return id_; }
  int dimension() const { return dim_; }
  std::uint64_t instance_seed() const { return seed_; }
  bool shifted() const { return shifted_; }
  double lower_bound() const { return kLowerBound; }
  double upper_bound() const { return kUpperBound; }
  double optimum_value() const { return f_opt_; }
  const std::vector<double>& optimum_point() const { return x_opt_; }
  std::string name() const;

  // Row-major D x D orthogonal matrices; identity-free families still carry them.
  const std::vector<double>& rotation_r() const { return r_; }
  const std::vector<double>& rotation_q() const { return q_; }

private:
  struct Peaks {
    std::vector<std::vector<double>> centers;
    std::vector<std::vector<double>> scales;  // diagonal of C_i
    std::vector<double> weights;
  };

  void setup_peaks(Rng& rng, int count);
  double raw(std::span<const double> x) const;

  FunctionId id_;
  int dim_;
  std::uint64_t seed_;
  bool shifted_;
  double f_opt_ = 0.0;
  double schwefel_offset_ = 0.0;
  std::vector<double> x_opt_;
  std::vector<double> r_;
  std::vector<double> q_;
  std::vector<double> signs_;
  Peaks peaks_;
};

struct ProblemSuite {
  std::vector<ProblemInstance> train_instances;
  std::vector<ProblemInstance> test_instances;
};

// Families held out for testing, in function-id order.
const std::array<FunctionId, 16>& test_families();
const std::array<FunctionId, 8>& train_families();

ProblemSuite make_suite(int dimension, std::uint64_t seed);

// Suite restricted to the given families for train and test, same seeding rule.
ProblemSuite make_custom_suite(std::span<const FunctionId> train, std::span<const FunctionId> test,
                               int dimension, std::uint64_t seed, InstanceOptions options = {});

// [{function_id, name, dimension, instance_seed, optimum_value}, ...] for train then test.
Json suite_manifest(const ProblemSuite& suite);

// Identifies the exact instances of a suite; feeds fitness-cache keys.
std::string suite_digest(const ProblemSuite& suite);

}  // namespace rewardevo::problems
