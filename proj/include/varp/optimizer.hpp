#pragma once

// Adam ascent, augmented-Lagrangian constraints and the training loop.

#include "varp/core.hpp"
#include "varp/divergences.hpp"
#include "varp/objectives.hpp"
#include "varp/pushforward.hpp"
#include "varp/stat_models.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace varp {

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::size_t epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  Vec m, v;
  std::size_t t = 0;

  AdamState() = default;
  AdamState(std::size_t L, AdamConfig c) : cfg(c), m(Vec::Zero(static_cast<Eigen::Index>(L))), v(Vec::Zero(static_cast<Eigen::Index>(L))) {}
};

// One bias-corrected ascent step. A non-finite gradient leaves both the
// state and lambda untouched.
inline void adam_step(AdamState& st, const Vec& grad, Vec& lambda, std::size_t epoch = 0) {
  if (grad.size() != lambda.size() || grad.size() != st.m.size())
    throw std::invalid_argument("adam: gradient and parameter sizes differ");
  if (!all_finite(as_span(grad))) throw NonFiniteGradient(epoch, "non-finite gradient, step rejected");
  const auto& c = st.cfg;
  ++st.t;
  st.m = c.beta1 * st.m + (1.0 - c.beta1) * grad;
  st.v = c.beta2 * st.v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  lambda.array() += c.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + c.eps);
}

// a(theta_j) for one component j of theta.
struct ConstraintFunction {
  enum class Kind { Moment, Rational, Tabulated };
  Kind kind = Kind::Moment;
  std::size_t component = 0;
  double kappa = 1.0;             // moment: theta^kappa
  double beta = -1.0, tau = 1.0;  // rational: 1 / (theta^beta + theta^tau)
  std::vector<double> xs, ys;     // tabulated, linear interpolation, flat outside

  static ConstraintFunction moment(double kappa, std::size_t component = 0) {
    ConstraintFunction f;
    f.kind = Kind::Moment;
    f.kappa = kappa;
    f.component = component;
    return f;
  }
  static ConstraintFunction rational(double beta, double tau, std::size_t component = 0) {
    ConstraintFunction f;
    f.kind = Kind::Rational;
    f.beta = beta;
    f.tau = tau;
    f.component = component;
    return f;
  }
  static ConstraintFunction tabulated(std::vector<double> xs, std::vector<double> ys, std::size_t component = 0) {
    if (xs.size() < 2 || xs.size() != ys.size()) throw std::invalid_argument("tabulated constraint needs >= 2 matching points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1])) throw std::invalid_argument("tabulated constraint abscissae must increase");
    for (double y : ys)
      if (!(y > 0.0)) throw std::invalid_argument("tabulated constraint values must be positive");
    ConstraintFunction f;
    f.kind = Kind::Tabulated;
    f.xs = std::move(xs);
    f.ys = std::move(ys);
    f.component = component;
    return f;
  }

  double value(double x) const {
    switch (kind) {
      case Kind::Moment: return std::pow(x, kappa);
      case Kind::Rational: return 1.0 / (std::pow(x, beta) + std::pow(x, tau));
      case Kind::Tabulated: {
        if (x <= xs.front()) return ys.front();
        if (x >= xs.back()) return ys.back();
        const auto i = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
        const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        return (1.0 - w) * ys[i - 1] + w * ys[i];
      }
    }
    return 0.0;
  }

  double derivative(double x) const {
    switch (kind) {
      case Kind::Moment: return kappa * std::pow(x, kappa - 1.0);
      case Kind::Rational: {
        const double d = std::pow(x, beta) + std::pow(x, tau);
        return -(beta * std::pow(x, beta - 1.0) + tau * std::pow(x, tau - 1.0)) / (d * d);
      }
      case Kind::Tabulated: {
        if (x <= xs.front() || x >= xs.back()) return 0.0;
        const auto i = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
        return (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
      }
    }
    return 0.0;
  }

  double operator()(const Vec& theta) const { return value(theta[static_cast<Eigen::Index>(component)]); }
};

struct Constraint {
  ConstraintFunction a;
  double target = 0.0;
};

using ConstraintSpec = std::vector<Constraint>;

struct ConstraintEstimate {
  Vec mean;   // E[a_k]
  Vec se;
  Vec value;  // E[a_k] - b_k
};

namespace detail {
inline ConstraintEstimate constraint_from_thetas(const std::vector<Vec>& thetas, const ConstraintSpec& spec) {
  const auto K = static_cast<Eigen::Index>(spec.size());
  ConstraintEstimate est{Vec::Zero(K), Vec::Zero(K), Vec::Zero(K)};
  const double n = static_cast<double>(thetas.size());
  for (Eigen::Index k = 0; k < K; ++k) {
    double s = 0.0, sq = 0.0;
    for (const auto& th : thetas) {
      const double v = spec[static_cast<std::size_t>(k)].a(th);
      s += v;
      sq += v * v;
    }
    est.mean[k] = s / n;
    est.se[k] = n > 1 ? std::sqrt(std::max(0.0, sq / n - est.mean[k] * est.mean[k]) / (n - 1.0)) : 0.0;
    est.value[k] = est.mean[k] - spec[static_cast<std::size_t>(k)].target;
  }
  return est;
}
}  // namespace detail

inline ConstraintEstimate estimate_constraint(const PriorNetwork& net, const ConstraintSpec& spec,
                                              std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 100) throw std::invalid_argument("constraint estimate needs >= 100 samples");
  const Mat th = net.sample_prior(n_samples, stream_key(seed, 0xc0de));
  std::vector<Vec> thetas;
  thetas.reserve(n_samples);
  for (Eigen::Index i = 0; i < th.rows(); ++i) thetas.emplace_back(th.row(i).transpose());
  return detail::constraint_from_thetas(thetas, spec);
}

struct LagrangianState {
  Vec eta;
  Vec eta_tilde;
  double v = 2.0;
  double M = 0.005;
  double eta_tilde_max = 1e4;
  double eta_tilde_min = 1e-8;
  std::size_t period = 100;

  LagrangianState() = default;
  explicit LagrangianState(std::size_t K, double eta_tilde0 = 1.0)
      : eta(Vec::Zero(static_cast<Eigen::Index>(K))), eta_tilde(Vec::Constant(static_cast<Eigen::Index>(K), eta_tilde0)) {}
};

// eta <- eta - eta_tilde * C; eta_tilde scaled by v (up to the cap) when
// ||C||_inf > M, divided by v otherwise.
inline void update_multipliers(LagrangianState& lag, const Vec& C) {
  if (C.size() != lag.eta.size()) throw std::invalid_argument("constraint vector has wrong length");
  lag.eta -= lag.eta_tilde.cwiseProduct(C);
  const double worst = C.size() ? C.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index k = 0; k < lag.eta_tilde.size(); ++k) {
    if (worst > lag.M)
      lag.eta_tilde[k] = std::min(lag.v * lag.eta_tilde[k], lag.eta_tilde_max);
    else
      lag.eta_tilde[k] = std::max(lag.eta_tilde[k] / lag.v, lag.eta_tilde_min);
  }
}

// Objective gradient plus sum_k (eta_k - eta_tilde_k C_k) E[a_k'(theta) dg/dlambda].
// C_k and the expectation are taken over the latents the objective
// estimate already drew.
template <StatModel Model>
GradEstimate lagrangian_gradient(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                                 const EstimatorConfig& cfg, const ConstraintSpec& spec, const LagrangianState& lag,
                                 std::uint64_t seed) {
  GradEstimate g = objective_gradient(net, model, div, cfg, seed);
  if (spec.empty()) return g;
  std::vector<Vec> eps;
  for (Eigen::Index i = 0; i < g.outer_latents.rows(); ++i) eps.emplace_back(g.outer_latents.row(i).transpose());
  for (Eigen::Index i = 0; i < g.marginal_latents.rows(); ++i) eps.emplace_back(g.marginal_latents.row(i).transpose());
  std::vector<PriorNetwork::Trace> traces;
  std::vector<Vec> thetas;
  for (const auto& e : eps) {
    traces.push_back(net.trace(as_span(e)));
    thetas.push_back(traces.back().theta);
  }
  const auto C = detail::constraint_from_thetas(thetas, spec);
  const Vec coef = lag.eta - lag.eta_tilde.cwiseProduct(C.value);
  const double scale = 1.0 / static_cast<double>(eps.size());
  Vec v = Vec::Zero(static_cast<Eigen::Index>(net.output_dim()));
  for (std::size_t i = 0; i < eps.size(); ++i) {
    v.setZero();
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const auto j = static_cast<Eigen::Index>(spec[k].a.component);
      v[j] += coef[static_cast<Eigen::Index>(k)] * spec[k].a.derivative(thetas[i][j]);
    }
    net.accumulate_vjp(traces[i], as_span(eps[i]), v, scale, g.grad);
  }
  return g;
}

struct TrainConfig {
  std::size_t epochs = 2000;
  AdamConfig adam;
  std::size_t monitor_every = 10;
  std::size_t constraint_samples = 10000;
  double zeta_floor = 1e-6;
  bool verbose = false;
};

struct MITracePoint {
  std::size_t epoch;
  double mean, lo95, hi95, std_error;
};

struct ConstraintTracePoint {
  std::size_t epoch;
  Vec mean;
  Vec gap;  // |E[a_k] - b_k|
  Vec eta;
  Vec eta_tilde;
};

struct TrainResult {
  PriorNetwork net;
  std::vector<MITracePoint> mi_trace;
  std::vector<ConstraintTracePoint> constraint_trace;
  std::optional<LagrangianState> lagrangian;
  std::size_t clamped = 0;
  std::size_t skipped = 0;
};

// Stochastic gradient ascent on the objective in `est` (augmented with
// the constraints in `spec` when non-empty). The MI trace is recorded
// every monitor_every epochs and at the last epoch; multipliers are
// refreshed every lag.period epochs from a fresh constraint_samples
// estimate.
template <StatModel Model>
TrainResult train(PriorNetwork net, const Model& model, const DivergenceSpec& div, const EstimatorConfig& est,
                  const ConstraintSpec& spec, const TrainConfig& tc, std::uint64_t seed,
                  std::optional<LagrangianState> lag0 = std::nullopt) {
  est.validate();
  if (tc.monitor_every < 1) throw ConfigError("monitor_every must be >= 1");
  TrainResult res;
  AdamState adam(net.num_params(), tc.adam);
  std::optional<LagrangianState> lag;
  if (!spec.empty()) lag = lag0 ? *lag0 : LagrangianState(spec.size());

  auto monitor = [&](std::size_t epoch) {
    const auto mi = estimate_mi(net, model, div, est, stream_key(seed, 0x6d6f, epoch));
    res.mi_trace.push_back({epoch, mi.value, mi.lo95(), mi.hi95(), mi.std_error});
    res.clamped += mi.clamped;
    if (tc.verbose) std::cerr << "epoch " << epoch << " mi " << mi.value << " +- " << mi.std_error << "\n";
  };
  auto record_constraint = [&](std::size_t epoch, const ConstraintEstimate& c) {
    res.constraint_trace.push_back({epoch, c.mean, c.value.cwiseAbs(), lag->eta, lag->eta_tilde});
  };

  monitor(0);
  if (lag) record_constraint(0, estimate_constraint(net, spec, tc.constraint_samples, stream_key(seed, 0xc057, 0)));
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto es = stream_key(seed, 0xe90c, epoch);
    GradEstimate g = lag ? lagrangian_gradient(net, model, div, est, spec, *lag, es)
                         : objective_gradient(net, model, div, est, es);
    res.clamped += g.clamped;
    res.skipped += g.skipped;
    Vec lambda = net.params();
    adam_step(adam, g.grad, lambda, epoch);
    net.set_params(lambda);
    net.project_constraints(tc.zeta_floor);
    if (lag && epoch % lag->period == 0) {
      const auto c = estimate_constraint(net, spec, tc.constraint_samples, stream_key(seed, 0xc057, epoch));
      update_multipliers(*lag, c.value);
      record_constraint(epoch, c);
      if (tc.verbose) std::cerr << "epoch " << epoch << " constraint gap " << c.value.cwiseAbs().maxCoeff() << "\n";
    }
    if (epoch % tc.monitor_every == 0 || epoch == tc.epochs) monitor(epoch);
  }
  res.net = std::move(net);
  res.lagrangian = lag;
  return res;
}

struct MomentEstimate {
  double value = 0.0;
  double se = 0.0;
  double max_share = 0.0;  // largest single term / sum
};

inline MomentEstimate moment_estimate(const std::vector<double>& terms) {
  MomentEstimate m;
  double s = 0.0, sq = 0.0, mx = 0.0;
  for (double v : terms) {
    s += v;
    sq += v * v;
    mx = std::max(mx, v);
  }
  const double n = static_cast<double>(terms.size());
  m.value = s / n;
  m.se = std::sqrt(std::max(0.0, sq / n - m.value * m.value) / (n - 1.0));
  m.max_share = s > 0.0 ? mx / s : 1.0;
  return m;
}

// Heavy-tail check: a single draw dominating the sum, or a relative
// standard error that does not shrink, signals a divergent integral.
inline bool looks_integrable(const MomentEstimate& m, double max_share = 0.05, double max_rel_se = 0.25) {
  if (!std::isfinite(m.value) || !std::isfinite(m.se)) return false;
  if (m.max_share > max_share) return false;
  return m.value > 0.0 && m.se / m.value <= max_rel_se;
}

struct PipelineConfig {
  TrainConfig stage1;
  TrainConfig stage3;
  std::size_t moment_samples = 100000;
  std::optional<double> exact_target;  // skip the estimated ratio when set
  bool skip_stage1 = false;
  std::optional<LagrangianState> lagrangian;  // stage-3 multiplier settings
};

struct PipelineResult {
  std::optional<TrainResult> unconstrained;
  MomentEstimate K_hat, c_hat;
  double target = 0.0;
  bool target_from_estimate = true;
  TrainResult constrained;
};

// Three steps: fit the unconstrained prior, estimate
// K = E[a^{1/alpha}] and c = E[a^{1 + 1/alpha}] under it, then fit the
// constrained prior with E[a] = c / K. `net_stage3` may use a different
// architecture from `net_stage1`.
template <StatModel Model>
PipelineResult constrained_pipeline(const PriorNetwork& net_stage1, const PriorNetwork& net_stage3, const Model& model,
                                    const DivergenceSpec& div, const EstimatorConfig& est, const ConstraintFunction& a,
                                    const PipelineConfig& pc, std::uint64_t seed) {
  if (div.kind != DivergenceKind::Alpha) throw ConfigError("the constrained pipeline needs an alpha divergence");
  PipelineResult res;
  if (!pc.skip_stage1) {
    res.unconstrained = train(net_stage1, model, div, est, {}, pc.stage1, stream_key(seed, 1));
    const Mat th = res.unconstrained->net.sample_prior(pc.moment_samples, stream_key(seed, 2));
    std::vector<double> kt, ct;
    kt.reserve(static_cast<std::size_t>(th.rows()));
    ct.reserve(static_cast<std::size_t>(th.rows()));
    for (Eigen::Index i = 0; i < th.rows(); ++i) {
      const double v = a(th.row(i).transpose());
      kt.push_back(std::pow(v, 1.0 / div.alpha));
      ct.push_back(std::pow(v, 1.0 + 1.0 / div.alpha));
    }
    res.K_hat = moment_estimate(kt);
    res.c_hat = moment_estimate(ct);
    if (!pc.exact_target && (!looks_integrable(res.K_hat) || !looks_integrable(res.c_hat)))
      throw std::runtime_error("constraint function looks non-integrable: K or c estimate is dominated by its tail");
  } else if (!pc.exact_target) {
    throw ConfigError("skipping the first stage requires an exact target");
  }
  if (pc.exact_target) {
    res.target = *pc.exact_target;
    res.target_from_estimate = false;
  } else {
    res.target = res.c_hat.value / res.K_hat.value;
  }
  res.constrained =
      train(net_stage3, model, div, est, {Constraint{a, res.target}}, pc.stage3, stream_key(seed, 3), pc.lagrangian);
  return res;
}

}  // namespace varp
