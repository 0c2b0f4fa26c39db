#include <algorithm>
#include <cmath>
#include <optional>

#include "adaptation.hpp"
#include "environment.hpp"

namespace rewardevo::envs::detail {
namespace {

constexpr int kParamsPerGroup = 7;
constexpr double kTiny = 1e-12;

struct GroupParams {
  double w;
  double mutation;
  double vmax_fraction;
  double c1;  // comprehensive-learning exemplar
  double c2;  // fitness-distance-ratio guide
  double c3;  // personal best
  double c4;  // global best
};

GroupParams decode(std::span<const double> a)
{
  auto u = [&](int k) { return std::clamp(a[static_cast<std::size_t>(k)], 0.0, 1.0); };
  return {0.1 + 0.8 * u(0), 0.05 * u(1), 0.05 + 0.45 * u(2), 2.0 * u(3), 2.0 * u(4), 2.0 * u(5), 2.0 * u(6)};
}

// Ensemble PSO with sub-swarm parameter sets and a shared global best.
class PsoEnv final : public Environment {
public:
  explicit PsoEnv(const MetaTask& task) : np_(task.optimizer.population_size), groups_(task.optimizer.groups)
  {
    if (groups_ < 1 || np_ < 2 * groups_) {
      throw problems::ContractViolation("PSO needs at least two particles per sub-swarm");
    }
  }

  void reset(const problems::ProblemInstance& f, std::uint64_t seed, long fe_budget) override
  {
    objective_.emplace(f, fe_budget);
    rng_ = Rng(seed);
    dim_ = f.dimension();
    lo_ = f.lower_bound();
    hi_ = f.upper_bound();
    const auto n = static_cast<std::size_t>(np_ * dim_);
    pos_.assign(n, 0.0);
    vel_.assign(n, 0.0);
    const double v0 = 0.2 * (hi_ - lo_);
    for (std::size_t k = 0; k < n; ++k) {
      pos_[k] = rng_.uniform(lo_, hi_);
      vel_[k] = rng_.uniform(-v0, v0);
    }
    cost_.assign(static_cast<std::size_t>(np_), 0.0);
    for (int i = 0; i < np_; ++i) {
      cost_[static_cast<std::size_t>(i)] = (*objective_)(row(pos_, i));
    }
    pbest_pos_ = pos_;
    pbest_ = cost_;
    per_no_improve_.assign(static_cast<std::size_t>(np_), 0.0);
    pci_.resize(static_cast<std::size_t>(np_));
    for (int i = 0; i < np_; ++i) {
      pci_[static_cast<std::size_t>(i)] =
          0.05 + 0.45 * (std::exp(10.0 * i / (np_ - 1)) - 1.0) / (std::exp(10.0) - 1.0);
    }
    gbest_index_ = static_cast<int>(std::min_element(pbest_.begin(), pbest_.end()) - pbest_.begin());
    gbest_ = y0_ = pbest_[static_cast<std::size_t>(gbest_index_)];
    gbest_pos_.assign(pbest_pos_.begin() + static_cast<std::ptrdiff_t>(gbest_index_ * dim_),
                      pbest_pos_.begin() + static_cast<std::ptrdiff_t>((gbest_index_ + 1) * dim_));
    pre_gbest_ = gbest_;
    no_improve_ = 0;
    cost_curve_.assign(1, gbest_);
    action_.assign(static_cast<std::size_t>(groups_ * kParamsPerGroup), 0.5);
    group_prev_best_.clear();
    improved_fraction_ = 0.0;
    initial_diversity_ = std::max(position_diversity(pos_, np_, dim_), kTiny);
  }

  bool done() const override { return objective_->remaining() < np_; }

  Observation observe() const override
  {
    Observation o;
    o.progress = progress();
    o.improved = gbest_ < pre_gbest_;
    o.diversity_ratio = position_diversity(pos_, np_, dim_) / initial_diversity_;
    o.stagnation = std::min(no_improve_, 20) / 20.0;
    o.improved_fraction = improved_fraction_;
    return o;
  }

  void step(std::span<const double> action) override
  {
    std::copy(action.begin(), action.end(), action_.begin());
    pre_gbest_ = gbest_;
    const int per_group = np_ / groups_;
    const double range = hi_ - lo_;
    std::vector<double> ex(static_cast<std::size_t>(dim_));
    std::vector<double> fdr(static_cast<std::size_t>(dim_));
    for (int i = 0; i < np_; ++i) {
      const int g = std::min(i / per_group, groups_ - 1);
      const GroupParams p = decode(std::span<const double>(action_).subspan(
          static_cast<std::size_t>(g * kParamsPerGroup), kParamsPerGroup));
      exemplar(i, ex);
      fdr_guide(i, fdr);
      const double vmax = p.vmax_fraction * range;
      for (int d = 0; d < dim_; ++d) {
        const auto k = static_cast<std::size_t>(i * dim_ + d);
        const double x = pos_[k];
        double v = p.w * vel_[k] + p.c1 * rng_.uniform() * (ex[static_cast<std::size_t>(d)] - x) +
                   p.c2 * rng_.uniform() * (fdr[static_cast<std::size_t>(d)] - x) +
                   p.c3 * rng_.uniform() * (pbest_pos_[k] - x) +
                   p.c4 * rng_.uniform() * (gbest_pos_[static_cast<std::size_t>(d)] - x);
        v = std::clamp(v, -vmax, vmax);
        double nx = x + v;
        if (nx < lo_ || nx > hi_) {
          nx = std::clamp(nx, lo_, hi_);
          v = 0.0;
        }
        vel_[k] = v;
        pos_[k] = nx;
      }
      if (rng_.bernoulli(p.mutation)) {
        for (int d = 0; d < dim_; ++d) {
          pos_[static_cast<std::size_t>(i * dim_ + d)] = rng_.uniform(lo_, hi_);
        }
      }
    }
    int improved = 0;
    for (int i = 0; i < np_; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      cost_[ui] = (*objective_)(row(pos_, i));
      if (cost_[ui] < pbest_[ui]) {
        pbest_[ui] = cost_[ui];
        std::copy_n(pos_.begin() + static_cast<std::ptrdiff_t>(i * dim_), dim_,
                    pbest_pos_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
        per_no_improve_[ui] = 0.0;
        ++improved;
        if (cost_[ui] < gbest_) {
          gbest_ = cost_[ui];
          gbest_index_ = i;
          std::copy_n(pos_.begin() + static_cast<std::ptrdiff_t>(i * dim_), dim_, gbest_pos_.begin());
        }
      } else {
        per_no_improve_[ui] += 1.0;
      }
    }
    improved_fraction_ = static_cast<double>(improved) / np_;
    no_improve_ = gbest_ < pre_gbest_ ? 0 : no_improve_ + 1;
    cost_curve_.push_back(gbest_);
  }

  void fill_context(RewardContext& ctx) const override
  {
    auto put = [&](std::string_view key, auto make) {
      if (ctx.wants(key)) {
        ctx.set(key, rsl::Value(make()));
      }
    };
    put("gbest_val", [&] { return gbest_; });
    put("pre_gbest", [&] { return pre_gbest_; });
    put("fes", [&] { return static_cast<double>(objective_->used()); });
    put("maxFEs", [&] { return static_cast<double>(objective_->budget()); });
    put("progress", [&] { return progress(); });
    put("NP", [&] { return static_cast<double>(np_); });
    put("dim", [&] { return static_cast<double>(dim_); });
    put("current_position", [&] { return to_matrix(pos_, np_, dim_); });
    put("velocity", [&] { return to_matrix(vel_, np_, dim_); });
    put("c_cost", [&] { return rsl::Vector(cost_); });
    put("pbest_position", [&] { return to_matrix(pbest_pos_, np_, dim_); });
    put("pbest", [&] { return rsl::Vector(pbest_); });
    put("gbest_position", [&] { return rsl::Vector(gbest_pos_); });
    put("gbest_index", [&] { return static_cast<double>(gbest_index_); });
    put("no_improve", [&] { return static_cast<double>(no_improve_); });
    put("per_no_improve", [&] { return rsl::Vector(per_no_improve_); });
    put("n_group", [&] { return static_cast<double>(groups_); });
    put("pci", [&] { return rsl::Vector(pci_); });
    put("log_index", [&] { return static_cast<double>(cost_curve_.size()); });
    put("log_interval", [&] { return static_cast<double>(np_); });
    put("cost_curve", [&] { return rsl::Vector(cost_curve_); });
    put("action", [&] { return rsl::Vector(action_); });
    put("mean_cost", [&] { return mean_of(cost_); });
    put("median_cost", [&] { return median_of(cost_); });
    put("std_cost", [&] { return std_of(cost_); });
    put("diversity", [&] { return position_diversity(pos_, np_, dim_); });
    put("gbest_improve", [&] { return pre_gbest_ - gbest_; });
    if (!group_prev_best_.empty()) {
      put("group_prev_best", [&] { return rsl::Vector(group_prev_best_); });
    }
  }

  // The next emission sees this iteration's per-group bests as "previous".
  void commit() override { group_prev_best_ = group_bests(); }

  double gbest() const override { return gbest_; }
  double y_initial() const override { return y0_; }
  long fes() const override { return objective_->used(); }

private:
  std::span<const double> row(const std::vector<double>& m, int i) const
  {
    return std::span<const double>(m).subspan(static_cast<std::size_t>(i * dim_), static_cast<std::size_t>(dim_));
  }
  double progress() const
  {
    return static_cast<double>(objective_->used()) / static_cast<double>(objective_->budget());
  }

  // Best current cost of each sub-swarm.
  std::vector<double> group_bests() const
  {
    const int per_group = np_ / groups_;
    std::vector<double> out(static_cast<std::size_t>(groups_));
    for (int g = 0; g < groups_; ++g) {
      const int start = g * per_group;
      const int end = g < groups_ - 1 ? (g + 1) * per_group : np_;
      out[static_cast<std::size_t>(g)] =
          *std::min_element(cost_.begin() + start, cost_.begin() + end);
    }
    return out;
  }

  // Comprehensive-learning exemplar: per dimension, the better of two random
  // personal bests with probability pci, else the particle's own.
  void exemplar(int i, std::vector<double>& out)
  {
    for (int d = 0; d < dim_; ++d) {
      int src = i;
      if (rng_.bernoulli(pci_[static_cast<std::size_t>(i)])) {
        const auto a = static_cast<int>(rng_.below(static_cast<std::uint64_t>(np_)));
        const auto b = static_cast<int>(rng_.below(static_cast<std::uint64_t>(np_)));
        src = pbest_[static_cast<std::size_t>(a)] <= pbest_[static_cast<std::size_t>(b)] ? a : b;
      }
      out[static_cast<std::size_t>(d)] = pbest_pos_[static_cast<std::size_t>(src * dim_ + d)];
    }
  }

  // Fitness-distance-ratio guide: per dimension, the personal best maximizing
  // improvement over the particle's pbest per unit distance.
  void fdr_guide(int i, std::vector<double>& out) const
  {
    const double own = pbest_[static_cast<std::size_t>(i)];
    for (int d = 0; d < dim_; ++d) {
      const double x = pos_[static_cast<std::size_t>(i * dim_ + d)];
      int arg = i;
      double best_ratio = -1.0;
      for (int j = 0; j < np_; ++j) {
        if (j == i) {
          continue;
        }
        const double pj = pbest_pos_[static_cast<std::size_t>(j * dim_ + d)];
        const double ratio = (own - pbest_[static_cast<std::size_t>(j)]) / (std::abs(pj - x) + kTiny);
        if (ratio > best_ratio) {
          best_ratio = ratio;
          arg = j;
        }
      }
      out[static_cast<std::size_t>(d)] = pbest_pos_[static_cast<std::size_t>(arg * dim_ + d)];
    }
  }

  int np_;
  int groups_;
  int dim_ = 0;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::optional<CountingObjective> objective_;
  Rng rng_;
  std::vector<double> pos_;
  std::vector<double> vel_;
  std::vector<double> cost_;
  std::vector<double> pbest_pos_;
  std::vector<double> pbest_;
  std::vector<double> per_no_improve_;
  std::vector<double> pci_;
  std::vector<double> gbest_pos_;
  std::vector<double> cost_curve_;
  std::vector<double> action_;
  std::vector<double> group_prev_best_;
  int gbest_index_ = 0;
  double gbest_ = 0.0;
  double pre_gbest_ = 0.0;
  double y0_ = 0.0;
  int no_improve_ = 0;
  double improved_fraction_ = 0.0;
  double initial_diversity_ = 1.0;
};

}  // namespace

std::unique_ptr<Environment> make_pso_environment(const MetaTask& task)
{
  return std::make_unique<PsoEnv>(task);
}

}  // namespace rewardevo::envs::detail
