#pragma once

#include "varp/core.hpp"

#include <cmath>
#include <string>

namespace varp {

enum class DivergenceKind { KL, Alpha };

// f-divergence generator. KL uses f = -log; Alpha uses
//   f_a(x) = (x^a - a x - (1 - a)) / (a (a - 1))
// or, when stabilized, the decreasing variant
//   fhat_a(x) = (x^a - 1) / (a (a - 1)) = f_a(x) + (x - 1) / (a - 1).
struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::KL;
  double alpha = 0.5;
  bool stabilized = true;

  static DivergenceSpec kl() { return {DivergenceKind::KL, 0.5, false}; }

  // alpha above 0.95 is refused unless `allow_near_one` is set; the
  // estimators become unstable as alpha approaches 1.
  static DivergenceSpec alpha_div(double a, bool stabilized = true, bool allow_near_one = false) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (a > 0.95 && !allow_near_one)
      throw std::invalid_argument("alpha > 0.95 is numerically unstable; set allow_alpha_near_one to override");
    return {DivergenceKind::Alpha, a, stabilized};
  }

  bool decreasing() const { return kind == DivergenceKind::KL || stabilized; }
  std::string name() const {
    if (kind == DivergenceKind::KL) return "kl";
    return (stabilized ? "alpha_hat(" : "alpha(") + std::to_string(alpha) + ")";
  }
};

inline void check_arg(const DivergenceSpec& d, double x) {
  if (std::isnan(x) || x < 0.0) throw DomainError("divergence argument must be nonnegative");
  if (x == 0.0 && d.kind == DivergenceKind::KL) throw DomainError("-log is undefined at 0");
}

inline double f_value(const DivergenceSpec& d, double x) {
  check_arg(d, x);
  if (d.kind == DivergenceKind::KL) return -std::log(x);
  const double a = d.alpha, xa = std::pow(x, a);
  if (d.stabilized) return (xa - 1.0) / (a * (a - 1.0));
  return (xa - a * x - (1.0 - a)) / (a * (a - 1.0));
}

inline double f_prime(const DivergenceSpec& d, double x) {
  check_arg(d, x);
  if (x == 0.0) throw DomainError("f' is unbounded at 0");
  if (d.kind == DivergenceKind::KL) return -1.0 / x;
  const double a = d.alpha, xa1 = std::pow(x, a - 1.0);
  if (d.stabilized) return xa1 / (a - 1.0);
  return (xa1 - 1.0) / (a - 1.0);
}

// F(x) = f(x) - x f'(x)
inline double F_term(const DivergenceSpec& d, double x) {
  check_arg(d, x);
  if (d.kind == DivergenceKind::KL) return 1.0 - std::log(x);
  const double a = d.alpha, xa = std::pow(x, a);
  if (d.stabilized) return ((1.0 - a) * xa - 1.0) / (a * (a - 1.0));
  return (1.0 - xa) / a;
}

inline double mi_upper_bound(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  return 1.0 / (alpha * (1.0 - alpha));
}

inline constexpr double kLogRatioClamp = 700.0;

// exp(log_ratio) with the exponent clamped to +-700; clamp events are
// added to `clamps`.
inline double ratio_from_log(double log_ratio, std::size_t& clamps) {
  if (log_ratio > kLogRatioClamp) {
    ++clamps;
    log_ratio = kLogRatioClamp;
  } else if (log_ratio < -kLogRatioClamp) {
    ++clamps;
    log_ratio = -kLogRatioClamp;
  }
  return std::exp(log_ratio);
}

// f and F evaluated from a log-ratio. KL stays in the log domain so that
// large ratios do not lose precision.
inline double f_from_log(const DivergenceSpec& d, double log_ratio, std::size_t& clamps) {
  if (d.kind == DivergenceKind::KL) return -log_ratio;
  return f_value(d, ratio_from_log(log_ratio, clamps));
}

inline double F_from_log(const DivergenceSpec& d, double log_ratio, std::size_t& clamps) {
  if (d.kind == DivergenceKind::KL) return 1.0 - log_ratio;
  return F_term(d, ratio_from_log(log_ratio, clamps));
}

}  // namespace varp
