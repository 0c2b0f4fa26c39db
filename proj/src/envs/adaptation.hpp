#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rewardevo/core/rng.hpp"

namespace rewardevo::envs::detail {

// SHADE success-history memory for F and Cr.
class SuccessMemory {
public:
  explicit SuccessMemory(int slots = 6) : f_(static_cast<std::size_t>(slots), 0.5), cr_(static_cast<std::size_t>(slots), 0.5) {}

  struct Draw {
    double f;
    double cr;
  };

  Draw sample(Rng& rng) const
  {
    const std::size_t r = rng.below(f_.size());
    double f = 0.0;
    do {
      f = rng.cauchy(f_[r], 0.1);
    } while (f <= 0.0);
    f = std::min(f, 1.0);
    const double cr = std::clamp(rng.normal(cr_[r], 0.1), 0.0, 1.0);
    return {f, cr};
  }

  void record(double f, double cr, double improvement)
  {
    sf_.push_back(f);
    scr_.push_back(cr);
    w_.push_back(improvement);
  }

  // Folds the recorded successes into the next slot (weighted Lehmer mean for
  // F, weighted mean for Cr) and clears them.
  void update()
  {
    if (!sf_.empty()) {
      double total = 0.0;
      for (double w : w_) {
        total += w;
      }
      if (total > 0.0) {
        double num = 0.0;
        double den = 0.0;
        double cr = 0.0;
        for (std::size_t i = 0; i < sf_.size(); ++i) {
          const double w = w_[i] / total;
          num += w * sf_[i] * sf_[i];
          den += w * sf_[i];
          cr += w * scr_[i];
        }
        f_[k_] = den > 0.0 ? num / den : f_[k_];
        cr_[k_] = cr;
        k_ = (k_ + 1) % f_.size();
      }
    }
    sf_.clear();
    scr_.clear();
    w_.clear();
  }

private:
  std::vector<double> f_;
  std::vector<double> cr_;
  std::size_t k_ = 0;
  std::vector<double> sf_;
  std::vector<double> scr_;
  std::vector<double> w_;
};

// Distinct random indices from [0, n) excluding `avoid`.
inline void pick_distinct(Rng& rng, int n, int avoid, int* out, int count)
{
  for (int c = 0; c < count; ++c) {
    int r = 0;
    bool clash = true;
    while (clash) {
      r = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      clash = r == avoid;
      for (int k = 0; k < c && !clash; ++k) {
        clash = out[k] == r;
      }
    }
    out[c] = r;
  }
}

// Repairs an out-of-bounds coordinate to the midpoint between parent and bound.
inline double repair(double v, double parent, double lo, double hi)
{
  if (v < lo) {
    return 0.5 * (lo + parent);
  }
  if (v > hi) {
    return 0.5 * (hi + parent);
  }
  return v;
}

}  // namespace rewardevo::envs::detail
