#pragma once

// Monte Carlo estimators of the generalized mutual information, its
// gradient, and the MLE-ratio lower bound.

#include "varp/core.hpp"
#include "varp/divergences.hpp"
#include "varp/parallel.hpp"
#include "varp/pushforward.hpp"
#include "varp/stat_models.hpp"

#include <optional>
#include <vector>

namespace varp {

enum class Objective { FullMI, LowerBound };

// Where L_N(X | theta_mle) comes from in the lower bound. Auto takes the
// closed form when the model has one and falls back to the sample proxy.
enum class MleSource { Auto, Proxy, Exact };

struct EstimatorConfig {
  std::size_t N = 10;         // observations per simulated dataset
  std::size_t T = 50;         // latent draws backing the marginal estimate
  std::size_t U = 1000;       // datasets per theta in the F_j average
  std::size_t n_outer = 200;  // theta draws for MI monitoring
  std::size_t n_theta = 50;   // theta draws per gradient estimate
  Objective objective = Objective::LowerBound;
  MleSource mle = MleSource::Auto;
  bool common_random_numbers = true;
  unsigned threads = 1;

  void validate() const {
    if (N < 1) throw ConfigError("estimator.N must be >= 1");
    if (T < 2) throw ConfigError("estimator.T must be >= 2");
    if (U < 1) throw ConfigError("estimator.U must be >= 1");
    if (n_outer < 2) throw ConfigError("estimator.n_outer must be >= 2");
    if (n_theta < 1) throw ConfigError("estimator.n_theta must be >= 1");
    if (threads < 1) throw ConfigError("estimator.threads must be >= 1");
  }
};

struct GradEstimate {
  Vec grad;
  std::size_t clamped = 0;
  std::size_t skipped = 0;  // theta draws outside the model support
  RowMat outer_latents;     // n_theta x p, the differentiated draws
  RowMat marginal_latents;  // T x p, the batch behind p_lambda
};

struct MIEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t clamped = 0;
  std::size_t skipped = 0;
  double lo95() const { return value - 1.96 * std_error; }
  double hi95() const { return value + 1.96 * std_error; }
};

namespace detail {

enum : std::uint64_t {
  kTagMarginal = 0x3a11,
  kTagOuter = 0x0e7e,
  kTagGrad = 0x96ad,
  kTagMI = 0x3141,
  kTagBound = 0xb0d5,
};

inline std::uint64_t objective_salt(const EstimatorConfig& cfg, std::uint64_t tag, const DivergenceSpec& d) {
  if (cfg.common_random_numbers) return 0;
  return mix64(tag) ^ mix64(static_cast<std::uint64_t>(d.kind) * 7 + (d.stabilized ? 1 : 0));
}

inline Vec draw_latent(std::size_t p, Rng& rng) {
  Vec e(static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = standard_normal(rng);
  return e;
}

template <StatModel Model>
struct Member {
  Vec eps;
  PriorNetwork::Trace trace;
  std::optional<typename Model::Point> point;
};

template <StatModel Model>
Member<Model> make_member(const PriorNetwork& net, const Model& model, Vec eps) {
  Member<Model> m{std::move(eps), {}, std::nullopt};
  m.trace = net.trace(as_span(m.eps));
  try {
    m.point = model.point(as_span(m.trace.theta));
  } catch (const DomainError&) {
  }
  return m;
}

// T pushforward draws shared by every marginal estimate of one call.
template <StatModel Model>
std::vector<Member<Model>> marginal_batch(const PriorNetwork& net, const Model& model, std::size_t T,
                                          std::uint64_t seed, std::uint64_t salt) {
  Rng rng = make_rng(seed, salt, kTagMarginal);
  std::vector<Member<Model>> batch;
  batch.reserve(T);
  for (std::size_t s = 0; s < T; ++s) batch.push_back(make_member(net, model, draw_latent(net.latent_dim(), rng)));
  return batch;
}

template <StatModel Model>
void batch_log_likelihoods(const Model& model, const typename Model::Data& x,
                           const std::vector<Member<Model>>& batch, std::vector<double>& out) {
  out.resize(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s)
    out[s] = batch[s].point ? model.log_likelihood(x, *batch[s].point) : kNegInf;
}

inline double max_of(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  return m;
}

template <typename Model>
double reference_log_likelihood(const Model& model, const typename Model::Data& x, MleSource src,
                                const std::vector<double>& batch_ll, double guard) {
  if (src != MleSource::Proxy) {
    if (auto v = max_log_likelihood(model, x, guard)) return *v;
    if (src == MleSource::Exact) throw std::invalid_argument("model has no closed-form MLE");
  }
  return max_of(batch_ll);
}

inline RowMat latents_of(const std::vector<Vec>& eps, std::size_t p) {
  RowMat m(static_cast<Eigen::Index>(eps.size()), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < eps.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = eps[i].transpose();
  return m;
}

template <typename Batch>
RowMat latents_of_batch(const Batch& batch, std::size_t p) {
  RowMat m(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < batch.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = batch[i].eps.transpose();
  return m;
}

}  // namespace detail

// log p_lambda(X) ~ log (1/T) sum_t L_N(X | g(lambda, eps_t)).
template <StatModel Model>
double log_marginal(const PriorNetwork& net, const Model& model, const typename Model::Data& x, std::size_t T,
                    std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  const auto batch = detail::marginal_batch(net, model, T, seed, 0);
  std::vector<double> ll;
  detail::batch_log_likelihoods(model, x, batch, ll);
  return log_mean_exp(ll);
}

template <StatModel Model>
double estimate_marginal(const PriorNetwork& net, const Model& model, const typename Model::Data& x,
                         std::size_t T, std::uint64_t seed) {
  return std::exp(log_marginal(net, model, x, T, seed));
}

// log max_t L_N(X | g(lambda, eps_t)) over the same draws as log_marginal.
template <StatModel Model>
double log_mle_proxy(const PriorNetwork& net, const Model& model, const typename Model::Data& x, std::size_t T,
                     std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  const auto batch = detail::marginal_batch(net, model, T, seed, 0);
  std::vector<double> ll;
  detail::batch_log_likelihoods(model, x, batch, ll);
  return detail::max_of(ll);
}

template <StatModel Model>
double mle_proxy(const PriorNetwork& net, const Model& model, const typename Model::Data& x, std::size_t T,
                 std::uint64_t seed) {
  return std::exp(log_mle_proxy(net, model, x, T, seed));
}

namespace detail {

// Mean and standard error of one f-value per outer draw.
template <StatModel Model, typename Value>
MIEstimate outer_average(const PriorNetwork& net, const Model& model, const EstimatorConfig& cfg,
                         std::uint64_t seed, std::uint64_t salt, Value&& value) {
  const auto batch = marginal_batch(net, model, cfg.T, seed, salt);
  std::vector<double> vals(cfg.n_outer, 0.0);
  std::vector<char> ok(cfg.n_outer, 0);
  std::vector<std::size_t> clamps(cfg.n_outer, 0);
  parallel_for(cfg.n_outer, cfg.threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, salt, kTagOuter, i);
    const auto m = make_member(net, model, draw_latent(net.latent_dim(), rng));
    if (!m.point) return;
    const auto x = model.simulate(*m.point, cfg.N, rng);
    std::vector<double> ll;
    batch_log_likelihoods(model, x, batch, ll);
    vals[i] = value(x, model.log_likelihood(x, *m.point), ll, clamps[i]);
    ok[i] = 1;
  });
  MIEstimate est;
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cfg.n_outer; ++i) {
    est.clamped += clamps[i];
    if (!ok[i]) {
      ++est.skipped;
      continue;
    }
    sum += vals[i];
    ++n;
  }
  if (n < 2) throw std::runtime_error("fewer than two valid prior draws");
  est.value = sum / static_cast<double>(n);
  for (std::size_t i = 0; i < cfg.n_outer; ++i)
    if (ok[i]) sq += (vals[i] - est.value) * (vals[i] - est.value);
  est.std_error = std::sqrt(sq / static_cast<double>(n - 1) / static_cast<double>(n));
  return est;
}

}  // namespace detail

// I_Df ~ mean over theta ~ pi_lambda, X ~ L_N(.|theta) of
// f(p_lambda(X) / L_N(X | theta)).
template <StatModel Model>
MIEstimate estimate_mi(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                       const EstimatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto salt = detail::objective_salt(cfg, detail::kTagMI, div);
  return detail::outer_average(net, model, cfg, seed, salt,
                               [&](const auto&, double ll_t, const std::vector<double>& ll, std::size_t& c) {
                                 return f_from_log(div, log_mean_exp(ll) - ll_t, c);
                               });
}

// B_Df ~ mean of f(L_N(X | theta_mle) / L_N(X | theta)).
template <StatModel Model>
MIEstimate estimate_lower_bound(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                                const EstimatorConfig& cfg, std::uint64_t seed, double guard = 1e-6) {
  cfg.validate();
  const auto salt = detail::objective_salt(cfg, detail::kTagMI, div);
  return detail::outer_average(net, model, cfg, seed, salt,
                               [&](const auto& x, double ll_t, const std::vector<double>& ll, std::size_t& c) {
                                 const double ref = detail::reference_log_likelihood(model, x, cfg.mle, ll, guard);
                                 return f_from_log(div, ref - ll_t, c);
                               });
}

// Gradient of the objective selected in cfg with respect to the network
// parameters. For each of n_theta outer draws theta_t, U datasets are
// simulated and the score is weighted by F(ratio). FullMI adds, for
// non-KL f, the term coming from the dependence of p_lambda on lambda:
//   sum_s J_s^T E_{t,X}[ f'(r) L(X|theta_s) / (T L(X|theta_t)) score(X|theta_s) ]
// where s runs over the marginal batch.
template <StatModel Model>
GradEstimate objective_gradient(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                                const EstimatorConfig& cfg, std::uint64_t seed, double guard = 1e-6) {
  cfg.validate();
  if (cfg.objective == Objective::LowerBound && !div.decreasing())
    throw std::invalid_argument("the lower bound needs a decreasing f (KL or stabilized alpha)");
  const auto salt = detail::objective_salt(cfg, detail::kTagGrad + static_cast<std::uint64_t>(cfg.objective), div);
  const auto batch = detail::marginal_batch(net, model, cfg.T, seed, salt);
  const std::size_t L = net.num_params(), q = net.output_dim(), T = cfg.T;
  const bool second = cfg.objective == Objective::FullMI && div.kind != DivergenceKind::KL;
  const double inv_u = 1.0 / static_cast<double>(cfg.U);

  struct Slot {
    Vec grad;
    Mat coef;  // T x q, second-term weights per marginal member
    Vec eps;
    std::size_t clamped = 0;
    bool ok = false;
  };
  std::vector<Slot> slots(cfg.n_theta);

  parallel_for(cfg.n_theta, cfg.threads, [&](std::size_t t) {
    Slot& slot = slots[t];
    Rng rng = make_rng(seed, salt, detail::kTagOuter, t);
    const auto m = detail::make_member(net, model, detail::draw_latent(net.latent_dim(), rng));
    slot.eps = m.eps;
    slot.grad = Vec::Zero(static_cast<Eigen::Index>(L));
    if (!m.point) return;
    if (second) slot.coef = Mat::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(q));
    Vec fj = Vec::Zero(static_cast<Eigen::Index>(q));
    Vec sc, sc_s;
    std::vector<double> ll;
    for (std::size_t u = 0; u < cfg.U; ++u) {
      const auto x = model.simulate(*m.point, cfg.N, rng);
      const double ll_t = model.log_likelihood(x, *m.point);
      model.score(x, *m.point, sc);
      detail::batch_log_likelihoods(model, x, batch, ll);
      double log_ratio;
      if (cfg.objective == Objective::LowerBound) {
        log_ratio = detail::reference_log_likelihood(model, x, cfg.mle, ll, guard) - ll_t;
      } else {
        log_ratio = log_mean_exp(ll) - ll_t;
      }
      fj += F_from_log(div, log_ratio, slot.clamped) * sc;
      if (!second) continue;
      // f'(r) exp(ll_s - ll_t) / T, formed in the log domain
      const double a = div.alpha;
      const double lr = std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp);
      for (std::size_t s = 0; s < T; ++s) {
        if (!batch[s].point) continue;
        const double d = ll[s] - ll_t - std::log(static_cast<double>(T));
        double w = ratio_from_log((a - 1.0) * lr + d, slot.clamped);
        if (!div.stabilized) w -= ratio_from_log(d, slot.clamped);
        w /= (a - 1.0);
        model.score(x, *batch[s].point, sc_s);
        slot.coef.row(static_cast<Eigen::Index>(s)) += w * sc_s.transpose();
      }
    }
    net.accumulate_vjp(m.trace, as_span(m.eps), fj * inv_u, 1.0, slot.grad);
    slot.ok = true;
  });

  GradEstimate out;
  out.grad = Vec::Zero(static_cast<Eigen::Index>(L));
  Mat coef;
  if (second) coef = Mat::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(q));
  std::vector<Vec> eps;
  eps.reserve(cfg.n_theta);
  std::size_t n_ok = 0;
  for (auto& s : slots) {
    out.clamped += s.clamped;
    eps.push_back(s.eps);
    if (!s.ok) {
      ++out.skipped;
      continue;
    }
    ++n_ok;
    out.grad += s.grad;
    if (second) coef += s.coef;
  }
  if (n_ok == 0) throw std::runtime_error("no valid prior draws in gradient estimate");
  out.grad /= static_cast<double>(n_ok);
  if (second) {
    const double scale = inv_u / static_cast<double>(n_ok);
    for (std::size_t s = 0; s < T; ++s) {
      if (!batch[s].point) continue;
      net.accumulate_vjp(batch[s].trace, as_span(batch[s].eps), coef.row(static_cast<Eigen::Index>(s)).transpose(),
                         scale, out.grad);
    }
  }
  out.outer_latents = detail::latents_of(eps, net.latent_dim());
  out.marginal_latents = detail::latents_of_batch(batch, net.latent_dim());
  return out;
}

template <StatModel Model>
GradEstimate grad_full_mi(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                          EstimatorConfig cfg, std::uint64_t seed) {
  cfg.objective = Objective::FullMI;
  return objective_gradient(net, model, div, cfg, seed);
}

template <StatModel Model>
GradEstimate grad_lower_bound(const PriorNetwork& net, const Model& model, const DivergenceSpec& div,
                              EstimatorConfig cfg, std::uint64_t seed) {
  cfg.objective = Objective::LowerBound;
  return objective_gradient(net, model, div, cfg, seed);
}

}  // namespace varp
