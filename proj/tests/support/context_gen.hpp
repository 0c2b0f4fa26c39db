#pragma once

// Randomized schema-valid reward contexts for conformance and property tests.
// Shapes are mutually consistent (NP x dim matrices, length-NP cost vectors);
// magnitudes sweep many decades and include degenerate populations.

#include <algorithm>
#include <cmath>
#include <string>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::testsupport {

class ContextGenerator {
public:
  ContextGenerator(envs::TaskId task, std::uint64_t seed) : task_(task), rng_(seed) {}

  rsl::MapContext next()
  {
    draw_shape();
    rsl::MapContext ctx;
    for (const auto& [name, info] : envs::task_schema(task_)) {
      if (name == "clip_range") {
        continue;  // never produced by the built-in learners
      }
      if (info.optional && rng_.bernoulli(0.5)) {
        continue;
      }
      ctx.set(name, value_for(name, info.type));
    }
    return ctx;
  }

private:
  void draw_shape()
  {
    const bool pso = task_ == envs::TaskId::PsoParameterControl;
    groups_ = pso ? 1 + static_cast<int>(rng_.below(6)) : 1;
    np_ = pso ? groups_ * (2 + static_cast<int>(rng_.below(20))) : 5 + static_cast<int>(rng_.below(56));
    dim_ = 1 + static_cast<int>(rng_.below(12));
    max_fes_ = 100 + static_cast<long>(rng_.below(100000));
    fes_ = rng_.bernoulli(0.1) ? (rng_.bernoulli(0.5) ? 0 : max_fes_) : static_cast<long>(rng_.below(static_cast<std::uint64_t>(max_fes_ + 1)));

    // Costs: offset (possibly negative optimum) plus a scale spanning many decades.
    const double offset = rng_.bernoulli(0.3) ? 0.0 : rng_.uniform(-1000.0, 1000.0);
    const double scale = std::pow(10.0, rng_.uniform(-10.0, 8.0));
    const bool flat = rng_.bernoulli(0.05);
    costs_.assign(static_cast<std::size_t>(np_), offset);
    for (auto& c : costs_) {
      c += flat ? 0.0 : scale * std::abs(rng_.normal());
    }
    gbest_ = *std::min_element(costs_.begin(), costs_.end());
    if (rng_.bernoulli(0.3)) {
      gbest_ -= scale * rng_.uniform();
    }
    prev_gbest_ = rng_.bernoulli(0.5) ? gbest_ : gbest_ + scale * rng_.uniform();

    const bool collapsed = rng_.bernoulli(0.05);
    const double spread = collapsed ? 0.0 : std::pow(10.0, rng_.uniform(-8.0, 0.7));
    positions_.assign(static_cast<std::size_t>(np_ * dim_), 0.0);
    const double centre = rng_.uniform(-4.0, 4.0);
    for (auto& x : positions_) {
      x = std::clamp(centre + spread * rng_.normal(), -5.0, 5.0);
    }
  }

  double cost_like() { return costs_[rng_.below(costs_.size())]; }

  rsl::Vector random_vector(std::size_t n, double lo, double hi)
  {
    rsl::Vector v(n);
    for (auto& x : v) {
      x = rng_.uniform(lo, hi);
    }
    return v;
  }

  rsl::Matrix positions() const
  {
    return {static_cast<std::size_t>(np_), static_cast<std::size_t>(dim_), positions_};
  }

  double mean() const
  {
    double s = 0.0;
    for (double c : costs_) {
      s += c;
    }
    return s / static_cast<double>(costs_.size());
  }

  double stddev() const
  {
    const double m = mean();
    double s = 0.0;
    for (double c : costs_) {
      s += (c - m) * (c - m);
    }
    return std::sqrt(s / static_cast<double>(costs_.size()));
  }

  double median() const
  {
    auto v = costs_;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  double progress() const { return static_cast<double>(fes_) / static_cast<double>(max_fes_); }

  rsl::Value value_for(const std::string& name, const std::string& type)
  {
    const auto np = static_cast<std::size_t>(np_);
    const auto dim = static_cast<std::size_t>(dim_);
    // Names shared across tasks first.
    if (name == "FEs" || name == "fes") return static_cast<double>(fes_);
    if (name == "MaxFEs" || name == "maxFEs") return static_cast<double>(max_fes_);
    if (name == "progress") return progress();
    if (name == "NP" || name == "population.NP" || name == "population.NA") return static_cast<double>(np_);
    if (name == "dim" || name == "population.dim") return static_cast<double>(dim_);
    if (name == "mean_cost") return mean();
    if (name == "median_cost") return median();
    if (name == "std_cost") return stddev();
    if (name == "diversity") return rng_.bernoulli(0.05) ? 0.0 : std::pow(10.0, rng_.uniform(-8.0, 0.7));
    if (name == "gbest_improve") return prev_gbest_ - gbest_;
    if (name == "training_step") return static_cast<double>(rng_.below(100000));
    if (name == "training_progress") return rng_.uniform();
    if (name == "gamma") return rng_.uniform(0.0, 1.0);
    if (name == "learning_rate") return rng_.uniform(1e-4, 1.0);

    switch (task_) {
      case envs::TaskId::DeOperatorSelection:
        if (name == "survival") return random_vector(np, 0.0, 50.0);
        if (name == "pointer") return static_cast<double>(rng_.below(np));
        if (name == "population") return positions();
        if (name == "costs") return rsl::Vector(costs_);
        if (name == "parent_cost" || name == "trial_cost") return cost_like() + (rng_.bernoulli(0.3) ? std::abs(cost_like()) : 0.0);
        if (name == "gbest_cost") return gbest_;
        if (name == "action" || name == "greedy_action") return static_cast<double>(rng_.below(3));
        if (name == "generation") return static_cast<double>(fes_ / np_);
        if (name == "accepted") return static_cast<double>(rng_.below(2));
        if (name == "delta_cost") return cost_like() - cost_like();
        if (name == "pointer_age") return static_cast<double>(rng_.below(50));
        if (name == "q_values") return random_vector(3, -10.0, 10.0);
        if (name == "q_span") return rng_.uniform(0.0, 20.0);
        if (name == "q_entropy") return rng_.uniform(0.0, std::log(3.0));
        if (name == "recent_reward_mean" || name == "recent_reward_max") return rng_.uniform(-1.0, 2.0);
        if (name == "improvement_history") return random_vector(1 + rng_.below(20), 0.0, 2.0);
        if (name == "long_ema_improvement") return rng_.uniform(0.0, 2.0);
        break;
      case envs::TaskId::PsoParameterControl:
        if (name == "gbest_val") return gbest_;
        if (name == "pre_gbest") return prev_gbest_;
        if (name == "current_position" || name == "pbest_position") return positions();
        if (name == "velocity") return rsl::Matrix{np, dim, random_vector(np * dim, -5.0, 5.0)};
        if (name == "c_cost") return rsl::Vector(costs_);
        if (name == "pbest") {
          auto v = costs_;
          for (auto& c : v) {
            c = std::min(c, gbest_ + std::abs(c - gbest_) * rng_.uniform());
          }
          return v;
        }
        if (name == "gbest_position") return random_vector(dim, -5.0, 5.0);
        if (name == "gbest_index") return static_cast<double>(rng_.below(np));
        if (name == "no_improve") return static_cast<double>(rng_.below(60));
        if (name == "per_no_improve") return random_vector(np, 0.0, 60.0);
        if (name == "n_group") return static_cast<double>(groups_);
        if (name == "pci") return random_vector(np, 0.05, 0.5);
        if (name == "log_index") return static_cast<double>(1 + rng_.below(100));
        if (name == "log_interval") return static_cast<double>(np_);
        if (name == "cost_curve") return random_vector(1 + rng_.below(50), gbest_, gbest_ + 1.0);
        if (name == "action") return random_vector(35, 0.0, 1.0);
        if (name == "log_prob") return rng_.uniform(-50.0, 1.0);
        if (name == "entropy") return rng_.uniform(0.0, 2.0);
        if (name == "group_prev_best") return random_vector(static_cast<std::size_t>(groups_), gbest_, gbest_ + std::abs(gbest_) + 1.0);
        break;
      case envs::TaskId::AlgorithmSelection:
        if (name == "last_cost") return prev_gbest_;
        if (name == "current_gbest" || name == "population.gbest") return gbest_;
        if (name == "cost_scale_factor") return std::abs(prev_gbest_) < 1e-12 ? 1.0 : prev_gbest_;
        if (name == "action") return static_cast<double>(rng_.below(3));
        if (name == "problem.lb") return -5.0;
        if (name == "problem.ub") return 5.0;
        if (name == "population.group") return positions();
        if (name == "population.cost") return rsl::Vector(costs_);
        if (name == "population.gbest_solution") return random_vector(dim, -5.0, 5.0);
        if (name == "population.archive") {
          const std::size_t rows = rng_.below(np + 1);
          return rsl::Matrix{rows, dim, random_vector(rows * dim, -5.0, 5.0)};
        }
        if (name == "agent_state") return rsl::Vector{progress(), static_cast<double>(rng_.below(2)), rng_.uniform(0.0, 2.0)};
        if (name == "policy_entropy") return rng_.uniform(0.0, std::log(3.0));
        if (name == "value_estimation") return rng_.uniform(-10.0, 10.0);
        if (name == "log_probability") return -rng_.uniform(0.0, 5.0);
        break;
    }
    // Generic fallback by declared type.
    if (type == "vector") return random_vector(np, -1.0, 1.0);
    if (type == "matrix") return positions();
    if (type == "integer") return static_cast<double>(rng_.below(100));
    return rng_.uniform(-1.0, 1.0);
  }

  envs::TaskId task_;
  Rng rng_;
  int np_ = 0;
  int dim_ = 0;
  int groups_ = 1;
  long max_fes_ = 0;
  long fes_ = 0;
  std::vector<double> costs_;
  std::vector<double> positions_;
  double gbest_ = 0.0;
  double prev_gbest_ = 0.0;
};

// Clip range each transcribed reward promises for its total.
inline std::pair<double, double> discovered_total_range(envs::TaskId task)
{
  switch (task) {
    case envs::TaskId::DeOperatorSelection: return {-1.0, 2.0};
    case envs::TaskId::AlgorithmSelection: return {-1.0, 1.5};
    case envs::TaskId::PsoParameterControl: return {-1.0, 1.0};
  }
  return {0.0, 0.0};
}

}  // namespace rewardevo::testsupport
