#include "rewardevo/problems/bbob.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rewardevo/core/digest.hpp"

namespace rewardevo::problems {
namespace {

constexpr double kPi = std::numbers::pi;

struct FamilyInfo {
  FunctionId id;
  std::string_view name;
  std::string_view key;
  std::string_view characteristics;
};

constexpr std::array<FamilyInfo, kFunctionCount> kFamilies{{
    {FunctionId::Sphere, "Sphere", "sphere", "separable, unimodal, perfectly conditioned"},
    {FunctionId::EllipsoidalSeparable, "Ellipsoidal separable", "ellipsoidal_separable",
     "separable, unimodal, condition number 1e6"},
    {FunctionId::RastriginSeparable, "Rastrigin separable", "rastrigin_separable",
     "separable, highly multimodal with a regular grid of about 10^D local optima"},
    {FunctionId::BucheRastrigin, "Buche Rastrigin", "buche_rastrigin",
     "separable, highly multimodal, asymmetric with a boundary penalty"},
    {FunctionId::LinearSlope, "Linear Slope", "linear_slope",
     "separable, linear, optimum on the domain boundary"},
    {FunctionId::AttractiveSector, "Attractive Sector", "attractive_sector",
     "unimodal, rotated, strongly asymmetric: only one orthant leads to the optimum"},
    {FunctionId::StepEllipsoidal, "Step Ellipsoidal", "step_ellipsoidal",
     "unimodal, rotated, made of plateaus; gradient-free progress only"},
    {FunctionId::RosenbrockOriginal, "Rosenbrock original", "rosenbrock_original",
     "moderately conditioned, curved narrow valley toward the optimum"},
    {FunctionId::RosenbrockRotated, "Rosenbrock rotated", "rosenbrock_rotated",
     "rotated curved narrow valley, non-separable"},
    {FunctionId::EllipsoidalHighCond, "Ellipsoidal high cond", "ellipsoidal_high_cond",
     "rotated, unimodal, condition number 1e6"},
    {FunctionId::Discus, "Discus", "discus",
     "rotated, unimodal, one direction 1000x more sensitive than the rest"},
    {FunctionId::BentCigar, "Bent Cigar", "bent_cigar",
     "rotated, unimodal, a single long thin ridge to follow"},
    {FunctionId::SharpRidge, "Sharp Ridge", "sharp_ridge",
     "rotated, non-differentiable ridge; progress along the ridge is slow"},
    {FunctionId::DifferentPowers, "Different Powers", "different_powers",
     "rotated, unimodal, sensitivity varies strongly between coordinates"},
    {FunctionId::RastriginMultimodal, "Rastrigin multimodal", "rastrigin_multimodal",
     "rotated, highly multimodal with a large global structure"},
    {FunctionId::Weierstrass, "Weierstrass", "weierstrass",
     "rotated, rugged and repetitive, many global optima-like basins"},
    {FunctionId::SchaffersF7, "Schaffers F7", "schaffers_f7",
     "rotated, highly multimodal, frequency and amplitude change with distance"},
    {FunctionId::SchaffersHighCond, "Schaffers high cond", "schaffers_high_cond",
     "rotated, highly multimodal, moderately ill-conditioned"},
    {FunctionId::CompositeGriewankRosenbrock, "Composite Grie rosen", "composite_griewank_rosenbrock",
     "rotated, multimodal composite of Griewank over Rosenbrock, weak global structure"},
    {FunctionId::Schwefel, "Schwefel", "schwefel",
     "deceptive multimodal, the best local optima lie far from each other near the boundary"},
    {FunctionId::Gallagher101Peaks, "Gallagher 101-peaks", "gallagher_101_peaks",
     "101 randomly placed peaks, weak global structure"},
    {FunctionId::Gallagher21Peaks, "Gallagher 21Peaks", "gallagher_21_peaks",
     "21 randomly placed ill-conditioned peaks, no global structure"},
    {FunctionId::Katsuura, "Katsuura", "katsuura",
     "rotated, extremely rugged and non-differentiable everywhere"},
    {FunctionId::LunacekBiRastrigin, "Lunacek bi Rastrigin", "lunacek_bi_rastrigin",
     "two Rastrigin funnels, the attractive larger funnel does not hold the optimum"},
}};

constexpr std::array<FunctionId, 8> kTrain{
    FunctionId::Sphere,       FunctionId::EllipsoidalSeparable, FunctionId::RastriginSeparable,
    FunctionId::LinearSlope,  FunctionId::RastriginMultimodal,  FunctionId::Weierstrass,
    FunctionId::SchaffersF7,  FunctionId::Gallagher101Peaks,
};

constexpr std::array<FunctionId, 16> kTest{
    FunctionId::BucheRastrigin,      FunctionId::AttractiveSector,
    FunctionId::StepEllipsoidal,     FunctionId::RosenbrockOriginal,
    FunctionId::RosenbrockRotated,   FunctionId::EllipsoidalHighCond,
    FunctionId::Discus,              FunctionId::BentCigar,
    FunctionId::SharpRidge,          FunctionId::DifferentPowers,
    FunctionId::SchaffersHighCond,   FunctionId::CompositeGriewankRosenbrock,
    FunctionId::Schwefel,            FunctionId::Gallagher21Peaks,
    FunctionId::Katsuura,            FunctionId::LunacekBiRastrigin,
};

const FamilyInfo& info(FunctionId id)
{
  const int index = static_cast<int>(id) - 1;
  if (index < 0 || index >= kFunctionCount) {
    throw ContractViolation("unknown BBOB function id " + std::to_string(static_cast<int>(id)));
  }
  return kFamilies[static_cast<std::size_t>(index)];
}

// Stream tags for the per-instance random draws.
enum StreamTag : std::uint64_t { kOptPoint = 1, kOptValue, kRotR, kRotQ, kSigns, kPeaks };

double tosz(double v)
{
  if (v == 0.0) {
    return 0.0;
  }
  const double h = std::log(std::abs(v));
  const double c1 = v > 0 ? 10.0 : 5.5;
  const double c2 = v > 0 ? 7.9 : 3.1;
  return std::copysign(std::exp(h + 0.049 * (std::sin(c1 * h) + std::sin(c2 * h))), v);
}

void tosz(std::vector<double>& v)
{
  for (double& e : v) {
    e = tosz(e);
  }
}

void tasy(std::vector<double>& v, double beta)
{
  const double d1 = static_cast<double>(v.size() - 1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 0) {
      v[i] = std::pow(v[i], 1.0 + beta * (static_cast<double>(i) / d1) * std::sqrt(v[i]));
    }
  }
}

double lambda(double alpha, std::size_t i, std::size_t dim)
{
  return std::pow(alpha, 0.5 * static_cast<double>(i) / static_cast<double>(dim - 1));
}

void scale_lambda(std::vector<double>& v, double alpha)
{
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] *= lambda(alpha, i, v.size());
  }
}

double fpen(std::span<const double> x)
{
  double s = 0.0;
  for (double e : x) {
    const double over = std::abs(e) - 5.0;
    if (over > 0) {
      s += over * over;
    }
  }
  return s;
}

std::vector<double> mul(const std::vector<double>& m, std::span<const double> v)
{
  const std::size_t n = v.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += m[i * n + j] * v[j];
    }
    out[i] = acc;
  }
  return out;
}

std::vector<double> diff(std::span<const double> x, const std::vector<double>& y)
{
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] - y[i];
  }
  return out;
}

// Gram-Schmidt on the rows of a standard-normal matrix.
std::vector<double> random_rotation(Rng& rng, int dim)
{
  const auto n = static_cast<std::size_t>(dim);
  std::vector<double> m(n * n);
  for (double& e : m) {
    e = rng.normal();
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dot += m[i * n + j] * m[k * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        m[i * n + j] -= dot * m[k * n + j];
      }
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      norm += m[i * n + j] * m[i * n + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < n; ++j) {
      m[i * n + j] /= norm;
    }
  }
  return m;
}

double sum_sq(const std::vector<double>& v)
{
  double s = 0.0;
  for (double e : v) {
    s += e * e;
  }
  return s;
}

double rastrigin_core(const std::vector<double>& z)
{
  double c = 0.0;
  for (double e : z) {
    c += std::cos(2.0 * kPi * e);
  }
  return 10.0 * (static_cast<double>(z.size()) - c) + sum_sq(z);
}

double rosenbrock_core(const std::vector<double>& z)
{
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < z.size(); ++i) {
    const double a = z[i] * z[i] - z[i + 1];
    const double b = z[i] - 1.0;
    s += 100.0 * a * a + b * b;
  }
  return s;
}

double weierstrass_sum(double zi)
{
  double s = 0.0;
  double a = 1.0;
  double b = 1.0;
  for (int k = 0; k < 12; ++k) {
    s += a * std::cos(2.0 * kPi * b * (zi + 0.5));
    a *= 0.5;
    b *= 3.0;
  }
  return s;
}

double schaffers_core(const std::vector<double>& z)
{
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < z.size(); ++i) {
    const double si = std::sqrt(z[i] * z[i] + z[i + 1] * z[i + 1]);
    const double root = std::sqrt(si);
    const double sn = std::sin(50.0 * std::pow(si, 0.2));
    s += root + root * sn * sn;
  }
  const double m = s / static_cast<double>(z.size() - 1);
  return m * m;
}

constexpr double kSchwefelOpt = 4.20968746359982;
constexpr double kLunacekMu0 = 2.5;

}  // namespace

std::string_view function_name(FunctionId id) { return info(id).name; }
std::string_view function_key(FunctionId id) { return info(id).key; }
std::string_view function_characteristics(FunctionId id) { return info(id).characteristics; }

std::optional<FunctionId> function_from_key(std::string_view key)
{
  for (const auto& f : kFamilies) {
    if (f.key == key || f.name == key) {
      return f.id;
    }
  }
  return std::nullopt;
}

const std::array<FunctionId, 16>& test_families() { return kTest; }
const std::array<FunctionId, 8>& train_families() { return kTrain; }

ProblemInstance::ProblemInstance(FunctionId id, int dimension, std::uint64_t instance_seed,
                                 InstanceOptions options)
    : id_(id), dim_(dimension), seed_(instance_seed), shifted_(options.shifted)
{
  (void)info(id);
  if (dimension < 2) {
    throw ContractViolation("BBOB dimension must be at least 2");
  }
  const auto n = static_cast<std::size_t>(dimension);

  Rng value_rng(derive_seed(seed_, kOptValue));
  f_opt_ = options.optimum_value.value_or(std::round(value_rng.uniform(0.0, 100.0) * 100.0) / 100.0);

  Rng rot_r(derive_seed(seed_, kRotR));
  Rng rot_q(derive_seed(seed_, kRotQ));
  r_ = random_rotation(rot_r, dimension);
  q_ = random_rotation(rot_q, dimension);

  Rng sign_rng(derive_seed(seed_, kSigns));
  signs_.resize(n);
  for (double& s : signs_) {
    s = sign_rng.bernoulli(0.5) ? 1.0 : -1.0;
  }

  Rng opt_rng(derive_seed(seed_, kOptPoint));
  x_opt_.resize(n);
  for (double& e : x_opt_) {
    e = options.shifted ? opt_rng.uniform(-4.0, 4.0) : 0.0;
  }

  const double c = std::max(1.0, std::sqrt(static_cast<double>(n)) / 8.0);
  switch (id_) {
    case FunctionId::BucheRastrigin:
      for (std::size_t i = 0; i < n; i += 2) {
        x_opt_[i] = std::abs(x_opt_[i]);
      }
      break;
    case FunctionId::LinearSlope:
      for (std::size_t i = 0; i < n; ++i) {
        x_opt_[i] = 5.0 * signs_[i];
      }
      break;
    case FunctionId::RosenbrockOriginal:
      for (double& e : x_opt_) {
        e *= 0.75;
      }
      break;
    case FunctionId::RosenbrockRotated:
    case FunctionId::CompositeGriewankRosenbrock: {
      // z = c R x + 1/2 hits the all-ones vector at x = R^T (1/(2c)).
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += r_[i * n + j];
        }
        x_opt_[j] = acc * 0.5 / c;
      }
      break;
    }
    case FunctionId::Schwefel:
      for (std::size_t i = 0; i < n; ++i) {
        x_opt_[i] = 0.5 * kSchwefelOpt * signs_[i];
      }
      break;
    case FunctionId::Gallagher101Peaks:
    case FunctionId::Gallagher21Peaks: {
      Rng peak_rng(derive_seed(seed_, kPeaks));
      setup_peaks(peak_rng, id_ == FunctionId::Gallagher101Peaks ? 101 : 21);
      x_opt_ = peaks_.centers.front();
      break;
    }
    case FunctionId::LunacekBiRastrigin:
      for (std::size_t i = 0; i < n; ++i) {
        x_opt_[i] = 0.5 * kLunacekMu0 * signs_[i];
      }
      break;
    default:
      break;
  }

  if (id_ == FunctionId::Schwefel) {
    // Offset so the optimum evaluates to exactly zero before f_opt is added.
    schwefel_offset_ = 0.0;
    schwefel_offset_ = -raw(x_opt_);
  }
}

void ProblemInstance::setup_peaks(Rng& rng, int count)
{
  const auto n = static_cast<std::size_t>(dim_);
  const bool many = count == 101;
  const double span = many ? 5.0 : 4.9;
  const double first_alpha = many ? 1000.0 : 1.0e6;
  const int rest = count - 1;

  std::vector<double> alphas(static_cast<std::size_t>(rest));
  for (int j = 0; j < rest; ++j) {
    alphas[static_cast<std::size_t>(j)] = std::pow(1000.0, 2.0 * j / static_cast<double>(rest - 1));
  }
  std::vector<std::size_t> alpha_order(alphas.size());
  std::iota(alpha_order.begin(), alpha_order.end(), std::size_t{0});
  for (std::size_t i = alpha_order.size(); i > 1; --i) {
    std::swap(alpha_order[i - 1], alpha_order[rng.below(i)]);
  }

  peaks_.centers.clear();
  peaks_.scales.clear();
  peaks_.weights.clear();
  for (int p = 0; p < count; ++p) {
    std::vector<double> center(n);
    const double reach = p == 0 ? 0.8 * span : span;
    for (double& e : center) {
      e = shifted_ || p > 0 ? rng.uniform(-reach, reach) : 0.0;
    }
    const double alpha = p == 0 ? first_alpha : alphas[alpha_order[static_cast<std::size_t>(p - 1)]];
    std::vector<double> scale(n);
    for (std::size_t j = 0; j < n; ++j) {
      scale[j] = lambda(alpha, j, n) * lambda(alpha, j, n) / std::pow(alpha, 0.25);
    }
    for (std::size_t i = n; i > 1; --i) {
      std::swap(scale[i - 1], scale[rng.below(i)]);
    }
    peaks_.centers.push_back(std::move(center));
    peaks_.scales.push_back(std::move(scale));
    peaks_.weights.push_back(p == 0 ? 10.0 : 1.1 + 8.0 * (p - 1) / static_cast<double>(count - 2));
  }
}

std::string ProblemInstance::name() const { return std::string(function_name(id_)); }

double ProblemInstance::evaluate(std::span<const double> x) const
{
  if (x.size() != static_cast<std::size_t>(dim_)) {
    throw ContractViolation("point has " + std::to_string(x.size()) + " coordinates, instance expects " +
                            std::to_string(dim_));
  }
  return raw(x) + f_opt_;
}

double ProblemInstance::raw(std::span<const double> x) const
{
  const std::size_t n = x.size();
  const double d1 = static_cast<double>(n - 1);
  const double dn = static_cast<double>(n);
  const double c = std::max(1.0, std::sqrt(dn) / 8.0);

  switch (id_) {
    case FunctionId::Sphere:
      return sum_sq(diff(x, x_opt_));

    case FunctionId::EllipsoidalSeparable: {
      auto z = diff(x, x_opt_);
      tosz(z);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s += std::pow(10.0, 6.0 * static_cast<double>(i) / d1) * z[i] * z[i];
      }
      return s;
    }

    case FunctionId::RastriginSeparable: {
      auto z = diff(x, x_opt_);
      tosz(z);
      tasy(z, 0.2);
      scale_lambda(z, 10.0);
      return rastrigin_core(z);
    }

    case FunctionId::BucheRastrigin: {
      auto z = diff(x, x_opt_);
      tosz(z);
      for (std::size_t i = 0; i < n; ++i) {
        double s = std::pow(10.0, 0.5 * static_cast<double>(i) / d1);
        if (z[i] > 0 && i % 2 == 0) {
          s *= 10.0;
        }
        z[i] *= s;
      }
      return rastrigin_core(z) + 100.0 * fpen(x);
    }

    case FunctionId::LinearSlope: {
      double f = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double si = signs_[i] * std::pow(10.0, static_cast<double>(i) / d1);
        const double zi = x_opt_[i] * x[i] < 25.0 ? x[i] : x_opt_[i];
        f += 5.0 * std::abs(si) - si * zi;
      }
      return f;
    }

    case FunctionId::AttractiveSector: {
      auto z = mul(r_, diff(x, x_opt_));
      scale_lambda(z, 10.0);
      z = mul(q_, z);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = z[i] * x_opt_[i] > 0 ? 100.0 : 1.0;
        s += (w * z[i]) * (w * z[i]);
      }
      return std::pow(tosz(s), 0.9);
    }

    case FunctionId::StepEllipsoidal: {
      auto zhat = mul(r_, diff(x, x_opt_));
      scale_lambda(zhat, 10.0);
      std::vector<double> ztil(n);
      for (std::size_t i = 0; i < n; ++i) {
        ztil[i] = std::abs(zhat[i]) > 0.5 ? std::floor(0.5 + zhat[i])
                                          : std::floor(0.5 + 10.0 * zhat[i]) / 10.0;
      }
      const auto z = mul(q_, ztil);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s += std::pow(10.0, 2.0 * static_cast<double>(i) / d1) * z[i] * z[i];
      }
      return 0.1 * std::max(std::abs(zhat[0]) / 1.0e4, s) + fpen(x);
    }

    case FunctionId::RosenbrockOriginal: {
      auto z = diff(x, x_opt_);
      for (double& e : z) {
        e = c * e + 1.0;
      }
      return rosenbrock_core(z);
    }

    case FunctionId::RosenbrockRotated: {
      auto z = mul(r_, x);
      for (double& e : z) {
        e = c * e + 0.5;
      }
      return rosenbrock_core(z);
    }

    case FunctionId::EllipsoidalHighCond: {
      auto z = mul(r_, diff(x, x_opt_));
      tosz(z);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s += std::pow(10.0, 6.0 * static_cast<double>(i) / d1) * z[i] * z[i];
      }
      return s;
    }

    case FunctionId::Discus: {
      auto z = mul(r_, diff(x, x_opt_));
      tosz(z);
      double s = 1.0e6 * z[0] * z[0];
      for (std::size_t i = 1; i < n; ++i) {
        s += z[i] * z[i];
      }
      return s;
    }

    case FunctionId::BentCigar: {
      auto z = mul(r_, diff(x, x_opt_));
      tasy(z, 0.5);
      z = mul(r_, z);
      double s = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        s += z[i] * z[i];
      }
      return z[0] * z[0] + 1.0e6 * s;
    }

    case FunctionId::SharpRidge: {
      auto z = mul(r_, diff(x, x_opt_));
      scale_lambda(z, 10.0);
      z = mul(q_, z);
      double s = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        s += z[i] * z[i];
      }
      return z[0] * z[0] + 100.0 * std::sqrt(s);
    }

    case FunctionId::DifferentPowers: {
      const auto z = mul(r_, diff(x, x_opt_));
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s += std::pow(std::abs(z[i]), 2.0 + 4.0 * static_cast<double>(i) / d1);
      }
      return std::sqrt(s);
    }

    case FunctionId::RastriginMultimodal: {
      auto z = mul(r_, diff(x, x_opt_));
      tosz(z);
      tasy(z, 0.2);
      z = mul(q_, z);
      scale_lambda(z, 10.0);
      z = mul(r_, z);
      return rastrigin_core(z);
    }

    case FunctionId::Weierstrass: {
      auto z = mul(r_, diff(x, x_opt_));
      tosz(z);
      z = mul(q_, z);
      scale_lambda(z, 0.01);
      z = mul(r_, z);
      const double f0 = weierstrass_sum(0.0);
      double s = 0.0;
      for (double e : z) {
        s += weierstrass_sum(e);
      }
      const double t = s / dn - f0;
      return 10.0 * t * t * t + 10.0 / dn * fpen(x);
    }

    case FunctionId::SchaffersF7:
    case FunctionId::SchaffersHighCond: {
      auto z = mul(r_, diff(x, x_opt_));
      tasy(z, 0.5);
      z = mul(q_, z);
      scale_lambda(z, id_ == FunctionId::SchaffersF7 ? 10.0 : 1000.0);
      return schaffers_core(z) + 10.0 * fpen(x);
    }

    case FunctionId::CompositeGriewankRosenbrock: {
      auto z = mul(r_, x);
      for (double& e : z) {
        e = c * e + 0.5;
      }
      double s = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double a = z[i] * z[i] - z[i + 1];
        const double b = z[i] - 1.0;
        const double si = 100.0 * a * a + b * b;
        s += si / 4000.0 - std::cos(si);
      }
      return 10.0 * s / d1 + 10.0;
    }

    case FunctionId::Schwefel: {
      std::vector<double> xh(n);
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = 2.0 * signs_[i] * x[i];
      }
      std::vector<double> zh(xh);
      for (std::size_t i = 1; i < n; ++i) {
        zh[i] = xh[i] + 0.25 * (xh[i - 1] - 2.0 * std::abs(x_opt_[i - 1]));
      }
      std::vector<double> z(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double anchor = 2.0 * std::abs(x_opt_[i]);
        z[i] = 100.0 * (lambda(10.0, i, n) * (zh[i] - anchor) + anchor);
      }
      double s = 0.0;
      std::vector<double> scaled(n);
      for (std::size_t i = 0; i < n; ++i) {
        s += z[i] * std::sin(std::sqrt(std::abs(z[i])));
        scaled[i] = z[i] / 100.0;
      }
      return -s / (100.0 * dn) + schwefel_offset_ + 100.0 * fpen(scaled);
    }

    case FunctionId::Gallagher101Peaks:
    case FunctionId::Gallagher21Peaks: {
      const auto rx = mul(r_, x);
      double best = 0.0;
      for (std::size_t p = 0; p < peaks_.centers.size(); ++p) {
        const auto ry = mul(r_, peaks_.centers[p]);
        double q = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = rx[j] - ry[j];
          q += peaks_.scales[p][j] * d * d;
        }
        best = std::max(best, peaks_.weights[p] * std::exp(-q / (2.0 * dn)));
      }
      const double t = tosz(10.0 - best);
      return t * t + fpen(x);
    }

    case FunctionId::Katsuura: {
      auto z = mul(r_, diff(x, x_opt_));
      scale_lambda(z, 100.0);
      z = mul(q_, z);
      const double expo = 10.0 / std::pow(dn, 1.2);
      double prod = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        double p2 = 2.0;
        for (int j = 1; j <= 32; ++j) {
          const double v = p2 * z[i];
          s += std::abs(v - std::nearbyint(v)) / p2;
          p2 *= 2.0;
        }
        prod *= std::pow(1.0 + static_cast<double>(i + 1) * s, expo);
      }
      const double k = 10.0 / (dn * dn);
      return k * prod - k + fpen(x);
    }

    case FunctionId::LunacekBiRastrigin: {
      const double s = 1.0 - 1.0 / (2.0 * std::sqrt(dn + 20.0) - 8.2);
      const double mu1 = -std::sqrt((kLunacekMu0 * kLunacekMu0 - 1.0) / s);
      std::vector<double> xh(n);
      std::vector<double> shifted(n);
      double a = 0.0;
      double b = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = 2.0 * signs_[i] * x[i];
        shifted[i] = xh[i] - kLunacekMu0;
        a += shifted[i] * shifted[i];
        b += (xh[i] - mu1) * (xh[i] - mu1);
      }
      auto z = mul(r_, shifted);
      scale_lambda(z, 100.0);
      z = mul(q_, z);
      double cs = 0.0;
      for (double e : z) {
        cs += std::cos(2.0 * kPi * e);
      }
      return std::min(a, dn + s * b) + 10.0 * (dn - cs) + 1.0e4 * fpen(x);
    }
  }
  throw ContractViolation("unhandled BBOB function id");
}

ProblemSuite make_custom_suite(std::span<const FunctionId> train, std::span<const FunctionId> test,
                               int dimension, std::uint64_t seed, InstanceOptions options)
{
  if (dimension < 2) {
    throw ContractViolation("suite dimension must be at least 2");
  }
  ProblemSuite suite;
  for (FunctionId id : train) {
    suite.train_instances.emplace_back(id, dimension, derive_seed(seed, static_cast<std::uint64_t>(id)),
                                       options);
  }
  for (FunctionId id : test) {
    suite.test_instances.emplace_back(id, dimension, derive_seed(seed, static_cast<std::uint64_t>(id)),
                                      options);
  }
  return suite;
}

ProblemSuite make_suite(int dimension, std::uint64_t seed)
{
  return make_custom_suite(kTrain, kTest, dimension, seed);
}

Json suite_manifest(const ProblemSuite& suite)
{
  auto entry = [](const ProblemInstance& p, std::string_view split) {
    return Json{{"function_id", static_cast<int>(p.function_id())},
                {"name", p.name()},
                {"split", split},
                {"dimension", p.dimension()},
                {"instance_seed", p.instance_seed()},
                {"optimum_value", p.optimum_value()},
                {"shifted", p.shifted()}};
  };
  Json out = Json::array();
  for (const auto& p : suite.train_instances) {
    out.push_back(entry(p, "train"));
  }
  for (const auto& p : suite.test_instances) {
    out.push_back(entry(p, "test"));
  }
  return out;
}

std::string suite_digest(const ProblemSuite& suite)
{
  return sha256_hex(suite_manifest(suite).dump());
}

}  // namespace rewardevo::problems
