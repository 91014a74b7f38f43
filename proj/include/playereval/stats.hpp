#pragma once

// Scalar-generic numeric helpers shared by learners, estimators and profiling.

#include <Eigen/Dense>
#include <algorithm>
#include <concepts>
#include <cstdint>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace playereval {

inline constexpr double kProbabilityFloor = 1e-6;

/// SplitMix64 finaliser applied to seed + golden-ratio multiple of salt.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform on [0, 1) from the top 53 bits, identical on every platform.
template <typename Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates with a rejection-free multiply-shift draw; the permutation
/// depends only on the engine output, not on the standard library.
template <typename T, typename Engine>
void portable_shuffle(std::vector<T>& values, Engine& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(values[i - 1], values[std::min(j, i - 1)]);
  }
}

template <std::floating_point Scalar>
Scalar expit(Scalar x) {
  if (x >= Scalar(0)) {
    const Scalar e = std::exp(-x);
    return Scalar(1) / (Scalar(1) + e);
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <std::floating_point Scalar>
Scalar logit(Scalar p) {
  return std::log(p) - std::log1p(-p);
}

template <std::floating_point Scalar>
Scalar clip_probability(Scalar p, Scalar floor = Scalar(kProbabilityFloor)) {
  return std::clamp(p, floor, Scalar(1) - floor);
}

template <typename Derived>
auto expit(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return expit(v); });
}

template <typename Derived>
auto logit(const Eigen::ArrayBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  return p.unaryExpr([](Scalar v) { return logit(v); });
}

template <typename Derived>
auto clip_probability(const Eigen::ArrayBase<Derived>& p,
                      typename Derived::Scalar floor = kProbabilityFloor) {
  using Scalar = typename Derived::Scalar;
  return p.unaryExpr([floor](Scalar v) { return clip_probability(v, floor); });
}

/// Mean with a shift by the first element. Constant inputs return that
/// constant exactly.
template <typename Derived>
typename Derived::Scalar stable_mean(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return std::numeric_limits<Scalar>::quiet_NaN();
  const auto plain = x.derived().eval();
  const Scalar shift = plain.coeff(0);
  Scalar acc(0);
  for (Eigen::Index i = 0; i < plain.size(); ++i) acc += plain.coeff(i) - shift;
  return shift + acc / Scalar(plain.size());
}

template <std::floating_point Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x / std::sqrt(Scalar(2)));
}

/// Standard normal quantile. Acklam's rational approximation (relative error
/// about 1e-9) followed by one Halley step against erfc.
template <std::floating_point Scalar>
Scalar normal_quantile(Scalar p) {
  if (!(p > Scalar(0) && p < Scalar(1))) {
    if (p == Scalar(0)) return -std::numeric_limits<Scalar>::infinity();
    if (p == Scalar(1)) return std::numeric_limits<Scalar>::infinity();
    return std::numeric_limits<Scalar>::quiet_NaN();
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  const double pd = static_cast<double>(p);
  double x;
  if (pd < p_low) {
    const double q = std::sqrt(-2 * std::log(pd));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (pd <= 1 - p_low) {
    const double q = pd - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-pd));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - pd;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return static_cast<Scalar>(x);
}

/// Two-sided critical value z_{(1+level)/2}.
template <std::floating_point Scalar>
Scalar two_sided_z(Scalar level) {
  return normal_quantile((Scalar(1) + level) / Scalar(2));
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
template <std::floating_point Scalar>
Scalar quantile_type7(std::span<const Scalar> sorted, Scalar prob) {
  const auto n = sorted.size();
  if (n == 1) return sorted[0];
  const Scalar h = Scalar(n - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - Scalar(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace playereval
