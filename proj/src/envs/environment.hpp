#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/envs/envs.hpp"

namespace rewardevo::envs::detail {

// Features a learner sees at a decision point.
struct Observation {
  double progress = 0.0;
  bool improved = false;         // best cost improved during the previous step
  double diversity_ratio = 1.0;  // current diversity / diversity after initialization
  double stagnation = 0.0;       // min(no_improve, 20) / 20
  double improved_fraction = 0.0;
};

// Objective wrapper that owns the FE counter and refuses to exceed the budget.
class CountingObjective {
public:
  CountingObjective(const problems::ProblemInstance& f, long budget) : f_(&f), budget_(budget) {}

  double operator()(std::span<const double> x)
  {
    if (used_ >= budget_) {
      throw problems::ContractViolation("objective evaluated beyond the FE budget");
    }
    ++used_;
    return f_->evaluate(x);
  }

  long used() const { return used_; }
  long budget() const { return budget_; }
  long remaining() const { return budget_ - used_; }
  const problems::ProblemInstance& problem() const { return *f_; }

private:
  const problems::ProblemInstance* f_;
  long budget_;
  long used_ = 0;
};

// One low-level optimizer driven step by step by a meta-policy.
class Environment {
public:
  virtual ~Environment() = default;

  // Initializes the population; consumes the initial FEs.
  virtual void reset(const problems::ProblemInstance& f, std::uint64_t seed, long fe_budget) = 0;
  virtual bool done() const = 0;
  virtual Observation observe() const = 0;
  // Advances to the next emission point using `action` (index in action[0] for
  // discrete tasks, 35 entries in [0, 1] for PSO).
  virtual void step(std::span<const double> action) = 0;
  // Optimizer-side fields and episode memory for the step just taken.
  virtual void fill_context(RewardContext& ctx) const = 0;
  // Updates episode memory once the step's context has been consumed.
  virtual void commit() {}

  virtual double gbest() const = 0;
  virtual double y_initial() const = 0;
  virtual long fes() const = 0;
};

std::unique_ptr<Environment> make_environment(const MetaTask& task);
std::unique_ptr<Environment> make_de_environment(const MetaTask& task);
std::unique_ptr<Environment> make_pso_environment(const MetaTask& task);
std::unique_ptr<Environment> make_as_environment(const MetaTask& task);

// Shared statistics helpers.
double mean_of(std::span<const double> xs);
double std_of(std::span<const double> xs);
double median_of(std::span<const double> xs);
// Mean over dimensions of the per-dimension population std (row-major NP x dim).
double position_diversity(std::span<const double> pop, int np, int dim);

rsl::Matrix to_matrix(std::span<const double> data, int rows, int cols);

}  // namespace rewardevo::envs::detail
