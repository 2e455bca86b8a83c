#pragma once

#include "varp/core.hpp"

#include <cmath>

namespace varp::special {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace detail {
// Below this point erfc underflows; Phi is taken from its asymptotic series.
inline constexpr double kTailSwitch = -35.0;

// 1 - 1/x^2 + 3/x^4 - 15/x^6 + ... truncated; x <= kTailSwitch.
inline double tail_series(double x) {
  const double r = 1.0 / (x * x);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -(2.0 * k - 1.0) * r;
    sum += term;
  }
  return sum;
}
}  // namespace detail

// log Phi(x), finite for every finite x.
inline double log_normal_cdf(double x) {
  if (x >= detail::kTailSwitch) {
    if (x > 5.0) return std::log1p(-0.5 * std::erfc(x / std::sqrt(2.0)));
    return std::log(normal_cdf(x));
  }
  return -0.5 * x * x - kLogSqrt2Pi - std::log(-x) + std::log(detail::tail_series(x));
}

// phi(x) / Phi(x), the inverse Mills ratio.
inline double mills_ratio(double x) {
  if (x >= detail::kTailSwitch) return std::exp(std::log(normal_pdf(x)) - log_normal_cdf(x));
  return -x / detail::tail_series(x);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) with the overflow branch for large x.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Inverse of softplus on (0, inf): log(exp(y) - 1).
inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace varp::special
