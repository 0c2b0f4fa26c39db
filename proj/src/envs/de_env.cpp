#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>

#include "adaptation.hpp"
#include "environment.hpp"

namespace rewardevo::envs::detail {
namespace {

constexpr std::size_t kHistoryLength = 20;
constexpr double kEmaAlpha = 0.1;
constexpr double kTiny = 1e-12;

// DE with one strategy choice per trial vector and asynchronous replacement.
class DeOperatorEnv final : public Environment {
public:
  explicit DeOperatorEnv(const MetaTask& task) : np_(task.optimizer.population_size)
  {
    if (np_ < 5) {
      throw problems::ContractViolation("DE operator selection needs at least 5 individuals");
    }
  }

  void reset(const problems::ProblemInstance& f, std::uint64_t seed, long fe_budget) override
  {
    objective_.emplace(f, fe_budget);
    rng_ = Rng(seed);
    dim_ = f.dimension();
    lo_ = f.lower_bound();
    hi_ = f.upper_bound();
    pop_.assign(static_cast<std::size_t>(np_ * dim_), 0.0);
    cost_.assign(static_cast<std::size_t>(np_), 0.0);
    survival_.assign(static_cast<std::size_t>(np_), 0.0);
    for (auto& x : pop_) {
      x = rng_.uniform(lo_, hi_);
    }
    for (int i = 0; i < np_; ++i) {
      cost_[static_cast<std::size_t>(i)] = (*objective_)(row(i));
    }
    best_ = static_cast<int>(std::min_element(cost_.begin(), cost_.end()) - cost_.begin());
    gbest_ = y0_ = cost_[static_cast<std::size_t>(best_)];
    prev_gbest_ = gbest_;
    memory_ = SuccessMemory(6);
    pointer_ = 0;
    initial_diversity_ = std::max(position_diversity(pop_, np_, dim_), kTiny);
    history_.clear();
    ema_.reset();
    trial_.assign(static_cast<std::size_t>(dim_), 0.0);
    action_ = 0;
    accepted_ = false;
    parent_cost_ = trial_cost_ = gbest_;
    pointer_age_ = 0.0;
    last_pointer_ = 0;
  }

  bool done() const override { return objective_->remaining() < 1; }

  Observation observe() const override
  {
    Observation o;
    o.progress = progress();
    o.improved = gbest_ < prev_gbest_;
    o.diversity_ratio = position_diversity(pop_, np_, dim_) / initial_diversity_;
    return o;
  }

  void step(std::span<const double> action) override
  {
    const int i = pointer_;
    action_ = std::clamp(static_cast<int>(action[0]), 0, 2);
    const auto [f, cr] = memory_.sample(rng_);
    int r[4];
    const double* x = row(i).data();
    const double* best = row(best_).data();
    switch (action_) {
      case 0:  // rand/1
        pick_distinct(rng_, np_, i, r, 3);
        for (int d = 0; d < dim_; ++d) {
          trial_[static_cast<std::size_t>(d)] = at(r[0], d) + f * (at(r[1], d) - at(r[2], d));
        }
        break;
      case 1: {  // current-to-rand/1
        pick_distinct(rng_, np_, i, r, 3);
        const double k = rng_.uniform();
        for (int d = 0; d < dim_; ++d) {
          trial_[static_cast<std::size_t>(d)] = x[d] + k * (at(r[0], d) - x[d]) + f * (at(r[1], d) - at(r[2], d));
        }
        break;
      }
      default:  // best/2
        pick_distinct(rng_, np_, i, r, 4);
        for (int d = 0; d < dim_; ++d) {
          trial_[static_cast<std::size_t>(d)] =
              best[d] + f * (at(r[0], d) - at(r[1], d)) + f * (at(r[2], d) - at(r[3], d));
        }
        break;
    }
    const auto jrand = static_cast<int>(rng_.below(static_cast<std::uint64_t>(dim_)));
    for (int d = 0; d < dim_; ++d) {
      auto& t = trial_[static_cast<std::size_t>(d)];
      if (d != jrand && !rng_.bernoulli(cr)) {
        t = x[d];
      }
      t = repair(t, x[d], lo_, hi_);
    }

    parent_cost_ = cost_[static_cast<std::size_t>(i)];
    trial_cost_ = (*objective_)(trial_);
    pointer_age_ = survival_[static_cast<std::size_t>(i)];
    last_pointer_ = i;
    prev_gbest_ = gbest_;
    accepted_ = trial_cost_ <= parent_cost_;
    if (accepted_) {
      if (trial_cost_ < parent_cost_) {
        memory_.record(f, cr, parent_cost_ - trial_cost_);
      }
      std::copy(trial_.begin(), trial_.end(), pop_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
      cost_[static_cast<std::size_t>(i)] = trial_cost_;
      survival_[static_cast<std::size_t>(i)] = 0.0;
      if (trial_cost_ < gbest_) {
        gbest_ = trial_cost_;
        best_ = i;
      }
    } else {
      survival_[static_cast<std::size_t>(i)] += 1.0;
    }
    if (++pointer_ == np_) {
      pointer_ = 0;
      memory_.update();
    }
  }

  void fill_context(RewardContext& ctx) const override
  {
    const double mean = mean_of(cost_);
    const double sd = std_of(cost_);
    const long fes = objective_->used();
    const long max_fes = objective_->budget();
    auto put = [&](std::string_view key, auto make) {
      if (ctx.wants(key)) {
        ctx.set(key, rsl::Value(make()));
      }
    };
    put("survival", [&] { return rsl::Vector(survival_); });
    put("pointer", [&] { return static_cast<double>(last_pointer_); });
    put("population", [&] { return to_matrix(pop_, np_, dim_); });
    put("costs", [&] { return rsl::Vector(cost_); });
    put("parent_cost", [&] { return parent_cost_; });
    put("trial_cost", [&] { return trial_cost_; });
    put("gbest_cost", [&] { return gbest_; });
    put("median_cost", [&] { return median_of(cost_); });
    put("mean_cost", [&] { return mean; });
    put("std_cost", [&] { return sd; });
    put("diversity", [&] { return position_diversity(pop_, np_, dim_); });
    put("FEs", [&] { return static_cast<double>(fes); });
    put("MaxFEs", [&] { return static_cast<double>(max_fes); });
    put("progress", [&] { return progress(); });
    put("action", [&] { return static_cast<double>(action_); });
    put("generation", [&] { return static_cast<double>(fes / np_); });
    put("accepted", [&] { return accepted_ ? 1.0 : 0.0; });
    put("delta_cost", [&] { return parent_cost_ - trial_cost_; });
    put("gbest_improve", [&] { return prev_gbest_ - gbest_; });
    put("pointer_age", [&] { return pointer_age_; });
    if (!history_.empty()) {
      put("improvement_history", [&] { return rsl::Vector(history_.begin(), history_.end()); });
    }
    if (ema_) {
      put("long_ema_improvement", [&] { return *ema_; });
    }
  }

  void commit() override
  {
    const double improve = prev_gbest_ - gbest_;
    if (improve <= 0.0) {
      return;
    }
    const double scale =
        std::max({std::abs(mean_of(cost_)), std_of(cost_), std::abs(gbest_), kTiny});
    const double normalized = improve / scale;
    history_.push_back(normalized);
    if (history_.size() > kHistoryLength) {
      history_.pop_front();
    }
    ema_ = ema_ ? (1.0 - kEmaAlpha) * *ema_ + kEmaAlpha * normalized : normalized;
  }

  double gbest() const override { return gbest_; }
  double y_initial() const override { return y0_; }
  long fes() const override { return objective_->used(); }

private:
  std::span<const double> row(int i) const
  {
    return std::span<const double>(pop_).subspan(static_cast<std::size_t>(i * dim_), static_cast<std::size_t>(dim_));
  }
  double at(int i, int d) const { return pop_[static_cast<std::size_t>(i * dim_ + d)]; }
  double progress() const
  {
    return static_cast<double>(objective_->used()) / static_cast<double>(objective_->budget());
  }

  int np_;
  int dim_ = 0;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::optional<CountingObjective> objective_;
  Rng rng_;
  std::vector<double> pop_;
  std::vector<double> cost_;
  std::vector<double> survival_;
  std::vector<double> trial_;
  SuccessMemory memory_;
  int best_ = 0;
  double gbest_ = 0.0;
  double prev_gbest_ = 0.0;
  double y0_ = 0.0;
  int pointer_ = 0;
  int last_pointer_ = 0;
  int action_ = 0;
  bool accepted_ = false;
  double parent_cost_ = 0.0;
  double trial_cost_ = 0.0;
  double pointer_age_ = 0.0;
  double initial_diversity_ = 1.0;
  std::deque<double> history_;
  std::optional<double> ema_;
};

}  // namespace

std::unique_ptr<Environment> make_de_environment(const MetaTask& task)
{
  return std::make_unique<DeOperatorEnv>(task);
}

}  // namespace rewardevo::envs::detail
