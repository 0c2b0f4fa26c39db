#include <algorithm>
#include <cmath>
#include <optional>

#include "adaptation.hpp"
#include "environment.hpp"

namespace rewardevo::envs::detail {
namespace {

constexpr double kTiny = 1e-12;
constexpr double kJdeTau = 0.1;
constexpr double kShadeP = 0.11;

// Per-variant adaptive state. Lives for the whole episode so a variant resumes
// where it left off when selected again.
struct VariantState {
  std::vector<double> f;   // variant 0: per-individual F
  std::vector<double> cr;  // variant 0: per-individual Cr
  SuccessMemory memory{6};
};

// Three DE variants sharing one population and archive, switched per interval.
class AlgorithmSelectionEnv final : public Environment {
public:
  explicit AlgorithmSelectionEnv(const MetaTask& task)
      : np_(task.optimizer.population_size), interval_(task.optimizer.decision_interval)
  {
    if (np_ < 5) {
      throw problems::ContractViolation("algorithm selection needs at least 5 individuals");
    }
    if (interval_ < np_) {
      throw problems::ContractViolation("decision interval must cover at least one generation");
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
    for (auto& x : pop_) {
      x = rng_.uniform(lo_, hi_);
    }
    cost_.assign(static_cast<std::size_t>(np_), 0.0);
    for (int i = 0; i < np_; ++i) {
      cost_[static_cast<std::size_t>(i)] = (*objective_)(row(pop_, i));
    }
    best_ = static_cast<int>(std::min_element(cost_.begin(), cost_.end()) - cost_.begin());
    gbest_ = y0_ = last_cost_ = cost_[static_cast<std::size_t>(best_)];
    gbest_pos_.assign(row(pop_, best_).begin(), row(pop_, best_).end());
    scale_ = std::abs(y0_) < kTiny ? 1.0 : y0_;
    archive_.clear();
    for (auto& v : variants_) {
      v = VariantState{};
    }
    variants_[0].f.assign(static_cast<std::size_t>(np_), 0.5);
    variants_[0].cr.assign(static_cast<std::size_t>(np_), 0.9);
    action_ = 0;
    initial_diversity_ = std::max(position_diversity(pop_, np_, dim_), kTiny);
  }

  bool done() const override { return objective_->remaining() < np_; }

  Observation observe() const override
  {
    Observation o;
    o.progress = progress();
    o.improved = gbest_ < last_cost_;
    o.diversity_ratio = position_diversity(pop_, np_, dim_) / initial_diversity_;
    return o;
  }

  void step(std::span<const double> action) override
  {
    action_ = std::clamp(static_cast<int>(action[0]), 0, 2);
    last_cost_ = gbest_;
    long consumed = 0;
    while (consumed + np_ <= interval_ && objective_->remaining() >= np_) {
      generation();
      consumed += np_;
    }
  }

  void fill_context(RewardContext& ctx) const override
  {
    auto put = [&](std::string_view key, auto make) {
      if (ctx.wants(key)) {
        ctx.set(key, rsl::Value(make()));
      }
    };
    put("last_cost", [&] { return last_cost_; });
    put("current_gbest", [&] { return gbest_; });
    put("cost_scale_factor", [&] { return scale_; });
    put("FEs", [&] { return static_cast<double>(objective_->used()); });
    put("MaxFEs", [&] { return static_cast<double>(objective_->budget()); });
    put("action", [&] { return static_cast<double>(action_); });
    put("problem.lb", [&] { return lo_; });
    put("problem.ub", [&] { return hi_; });
    put("population.group", [&] { return to_matrix(pop_, np_, dim_); });
    put("population.cost", [&] { return rsl::Vector(cost_); });
    put("population.gbest", [&] { return gbest_; });
    put("population.gbest_solution", [&] { return rsl::Vector(gbest_pos_); });
    put("population.archive", [&] {
      return to_matrix(archive_, static_cast<int>(archive_.size() / static_cast<std::size_t>(dim_)), dim_);
    });
    put("population.NP", [&] { return static_cast<double>(np_); });
    put("population.NA", [&] { return static_cast<double>(np_); });
    put("population.dim", [&] { return static_cast<double>(dim_); });
  }

  double gbest() const override { return gbest_; }
  double y_initial() const override { return y0_; }
  long fes() const override { return objective_->used(); }

private:
  std::span<const double> row(const std::vector<double>& m, int i) const
  {
    return std::span<const double>(m).subspan(static_cast<std::size_t>(i * dim_), static_cast<std::size_t>(dim_));
  }
  double at(int i, int d) const { return pop_[static_cast<std::size_t>(i * dim_ + d)]; }
  double progress() const
  {
    return static_cast<double>(objective_->used()) / static_cast<double>(objective_->budget());
  }
  int archive_rows() const { return static_cast<int>(archive_.size() / static_cast<std::size_t>(dim_)); }

  // Index of a random member among the best ceil(p * NP).
  int pick_pbest(const std::vector<int>& order, double p)
  {
    const int top = std::max(1, static_cast<int>(std::ceil(p * np_)));
    return order[rng_.below(static_cast<std::uint64_t>(top))];
  }

  // Donor from population or archive, distinct from i and r1 when drawn from the population.
  const double* pick_pop_or_archive(int i, int r1)
  {
    const int total = np_ + archive_rows();
    while (true) {
      const auto r = static_cast<int>(rng_.below(static_cast<std::uint64_t>(total)));
      if (r < np_) {
        if (r != i && r != r1) {
          return &pop_[static_cast<std::size_t>(r * dim_)];
        }
      } else {
        return &archive_[static_cast<std::size_t>((r - np_) * dim_)];
      }
    }
  }

  void add_to_archive(std::span<const double> x)
  {
    if (archive_rows() < np_) {
      archive_.insert(archive_.end(), x.begin(), x.end());
      return;
    }
    const auto slot = static_cast<std::size_t>(rng_.below(static_cast<std::uint64_t>(np_)));
    std::copy(x.begin(), x.end(), archive_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
  }

  // One synchronous generation of the active variant.
  void generation()
  {
    VariantState& state = variants_[static_cast<std::size_t>(action_)];
    std::vector<int> order(static_cast<std::size_t>(np_));
    for (int i = 0; i < np_; ++i) {
      order[static_cast<std::size_t>(i)] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return cost_[static_cast<std::size_t>(a)] < cost_[static_cast<std::size_t>(b)];
    });
    const double p_rand_to_pbest = std::max(0.05, 0.4 - 0.3 * progress() * progress());

    std::vector<double> trials(pop_.size());
    std::vector<double> fs(static_cast<std::size_t>(np_));
    std::vector<double> crs(static_cast<std::size_t>(np_));
    int r[3];
    for (int i = 0; i < np_; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      double f = 0.0;
      double cr = 0.0;
      if (action_ == 0) {
        f = rng_.bernoulli(kJdeTau) ? 0.1 + 0.9 * rng_.uniform() : state.f[ui];
        cr = rng_.bernoulli(kJdeTau) ? rng_.uniform() : state.cr[ui];
      } else {
        const auto draw = state.memory.sample(rng_);
        f = draw.f;
        cr = draw.cr;
      }
      fs[ui] = f;
      crs[ui] = cr;
      double* t = &trials[ui * static_cast<std::size_t>(dim_)];
      const double* x = &pop_[ui * static_cast<std::size_t>(dim_)];
      if (action_ == 0) {
        pick_distinct(rng_, np_, i, r, 3);
        for (int d = 0; d < dim_; ++d) {
          t[d] = at(r[0], d) + f * (at(r[1], d) - at(r[2], d));
        }
      } else if (action_ == 1) {
        const int pb = pick_pbest(order, kShadeP);
        pick_distinct(rng_, np_, i, r, 1);
        const double* x2 = pick_pop_or_archive(i, r[0]);
        for (int d = 0; d < dim_; ++d) {
          t[d] = x[d] + f * (at(pb, d) - x[d]) + f * (at(r[0], d) - x2[d]);
        }
      } else {
        const int pb = pick_pbest(order, p_rand_to_pbest);
        pick_distinct(rng_, np_, i, r, 3);
        for (int d = 0; d < dim_; ++d) {
          t[d] = at(r[0], d) + f * (at(pb, d) - at(r[0], d)) + f * (at(r[1], d) - at(r[2], d));
        }
      }
      const auto jrand = static_cast<int>(rng_.below(static_cast<std::uint64_t>(dim_)));
      for (int d = 0; d < dim_; ++d) {
        if (d != jrand && !rng_.bernoulli(cr)) {
          t[d] = x[d];
        }
        t[d] = repair(t[d], x[d], lo_, hi_);
      }
    }

    for (int i = 0; i < np_; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double c = (*objective_)(row(trials, i));
      if (c <= cost_[ui]) {
        if (c < cost_[ui]) {
          add_to_archive(row(pop_, i));
          if (action_ == 0) {
            state.f[ui] = fs[ui];
            state.cr[ui] = crs[ui];
          } else {
            state.memory.record(fs[ui], crs[ui], cost_[ui] - c);
          }
        }
        std::copy_n(trials.begin() + static_cast<std::ptrdiff_t>(ui * dim_), dim_,
                    pop_.begin() + static_cast<std::ptrdiff_t>(ui * dim_));
        cost_[ui] = c;
        if (c < gbest_) {
          gbest_ = c;
          best_ = i;
          gbest_pos_.assign(row(pop_, i).begin(), row(pop_, i).end());
        }
      }
    }
    if (action_ != 0) {
      state.memory.update();
    }
  }

  int np_;
  long interval_;
  int dim_ = 0;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::optional<CountingObjective> objective_;
  Rng rng_;
  std::vector<double> pop_;
  std::vector<double> cost_;
  std::vector<double> archive_;
  std::vector<double> gbest_pos_;
  std::array<VariantState, 3> variants_;
  int best_ = 0;
  int action_ = 0;
  double gbest_ = 0.0;
  double y0_ = 0.0;
  double last_cost_ = 0.0;
  double scale_ = 1.0;
  double initial_diversity_ = 1.0;
};

}  // namespace

std::unique_ptr<Environment> make_as_environment(const MetaTask& task)
{
  return std::make_unique<AlgorithmSelectionEnv>(task);
}

}  // namespace rewardevo::envs::detail
