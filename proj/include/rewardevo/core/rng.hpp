#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace rewardevo {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept
{
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Independent stream seed for (base, tag). Stable across platforms.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept
{
  return mix64(base ^ mix64(tag ^ 0xD1B54A32D192ED03ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept
{
  return derive_seed(base, fnv1a64(tag));
}

// Portable random source: std::mt19937_64 is bit-specified by the standard,
// and every distribution below is written out here rather than taken from
// <random>, whose distributions are implementation-defined.
class Rng {
public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n)
  {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) {
      r = engine_();
    }
    return r % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal()
  {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double cauchy(double loc, double scale)
  {
    return loc + scale * std::tan(std::numbers::pi * (uniform() - 0.5));
  }

  std::string state() const;
  void restore(const std::string& state);

private:
  std::mt19937_64 engine_;
};

}  // namespace rewardevo
