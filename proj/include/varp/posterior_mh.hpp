#pragma once

// Random-walk Metropolis-Hastings on the latent variable. Samples of
// eps | X pushed through g are samples of theta | X.

#include "varp/core.hpp"
#include "varp/pushforward.hpp"
#include "varp/stat_models.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace varp {

struct MHConfig {
  std::size_t total_iters = 100000;
  std::size_t keep_last = 50000;
  std::size_t adapt_batch = 100;
  double target_accept = 0.40;
  double initial_scale = 0.0;  // 0 -> 2.38 / sqrt(dim)
  double scale_min = 1e-6;
  double scale_max = 1e3;
  std::size_t init_draws = 100;
  std::optional<Mat> covariance;  // proposal shape; identity when absent

  void validate() const {
    if (total_iters < 1) throw ConfigError("posterior.total_iters must be >= 1");
    if (keep_last < 1 || keep_last > total_iters) throw ConfigError("posterior.keep_last must lie in [1, total_iters]");
    if (adapt_batch < 1) throw ConfigError("posterior.adapt_batch must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("posterior.target_accept must lie in (0, 1)");
    if (initial_scale < 0.0) throw ConfigError("posterior.initial_scale must be nonnegative");
  }
};

// Optional reflecting box for the chain state.
struct Box {
  Vec lo, hi;
};

struct Chain {
  RowMat states;                  // kept window, keep_last x dim
  std::vector<std::uint8_t> accepted;  // every iteration
  std::vector<double> scale_history;   // scale after each batch
  double final_scale = 0.0;
};

struct MHDiagnostics {
  double accept_burnin = 0.0;
  double accept_kept = 0.0;
  double final_scale = 0.0;
  std::vector<std::vector<double>> autocorr;  // per theta component, lags 1, 5, 10
  std::size_t zero_accept_batches = 0;
  std::size_t reflections = 0;
  std::vector<std::string> warnings;
};

struct MHResult {
  RowMat theta;  // kept window pushed forward, keep_last x q
  Chain chain;
  MHDiagnostics diagnostics;
};

inline double adapt_scale(double scale, double batch_accept_rate, double target = 0.40, double lo = 1e-6,
                          double hi = 1e3) {
  return std::clamp(scale * std::exp(batch_accept_rate - target), lo, hi);
}

// min(1, exp(lq - lp)) for a symmetric proposal; 0 outside the support.
inline double mh_accept_probability(double lp_current, double lp_proposed) {
  if (!std::isfinite(lp_proposed)) return 0.0;
  if (!std::isfinite(lp_current)) return 1.0;
  return lp_proposed >= lp_current ? 1.0 : std::exp(lp_proposed - lp_current);
}

// Normalized autocorrelation at lags 0..max_lag.
inline std::vector<double> autocorrelation(std::span<const double> x, std::size_t max_lag) {
  if (x.size() <= max_lag) throw std::invalid_argument("chain shorter than the requested lag");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  if (!(c0 > 0.0)) throw std::domain_error("autocorrelation of a constant chain is undefined");
  std::vector<double> out(max_lag + 1);
  for (std::size_t l = 0; l <= max_lag; ++l) {
    double c = 0.0;
    for (std::size_t i = 0; i + l < x.size(); ++i) c += (x[i] - mean) * (x[i + l] - mean);
    out[l] = c / c0;
  }
  return out;
}

namespace detail {

inline void reflect_into(Vec& x, const Box& box, std::size_t& count) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double lo = box.lo[i], hi = box.hi[i], w = hi - lo;
    if (x[i] >= lo && x[i] <= hi) continue;
    ++count;
    double y = std::fmod(x[i] - lo, 2.0 * w);
    if (y < 0.0) y += 2.0 * w;
    x[i] = y <= w ? lo + y : hi - (y - w);
  }
}

}  // namespace detail

struct CoreResult {
  RowMat kept;
  Chain chain;
  MHDiagnostics diag;
};

// Generic adaptive random-walk MH. The proposal is x + scale * L z with
// L L^T the configured covariance. The scale adapts once per batch
// during burn-in and is frozen over the kept window.
inline CoreResult mh_core(const std::function<double(const Vec&)>& log_target, Vec x0, const MHConfig& cfg, Rng& rng,
                          const std::optional<Box>& box = std::nullopt) {
  cfg.validate();
  const auto d = x0.size();
  Mat chol = Mat::Identity(d, d);
  if (cfg.covariance) {
    if (cfg.covariance->rows() != d || cfg.covariance->cols() != d)
      throw ConfigError("proposal covariance has wrong shape");
    Eigen::LLT<Mat> llt(*cfg.covariance);
    if (llt.info() != Eigen::Success) throw ConfigError("proposal covariance is not positive definite");
    chol = llt.matrixL();
  }
  CoreResult res;
  res.kept.resize(static_cast<Eigen::Index>(cfg.keep_last), d);
  res.chain.accepted.reserve(cfg.total_iters);
  double scale = cfg.initial_scale > 0.0 ? cfg.initial_scale : 2.38 / std::sqrt(static_cast<double>(d));
  const std::size_t burn = cfg.total_iters - cfg.keep_last;

  Vec x = std::move(x0), y(d), z(d);
  double lp = log_target(x);
  std::size_t batch_acc = 0, batch_n = 0, acc_burn = 0, acc_kept = 0;
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    for (Eigen::Index i = 0; i < d; ++i) z[i] = standard_normal(rng);
    y = x + scale * (chol * z);
    if (box) detail::reflect_into(y, *box, res.diag.reflections);
    const double lq = log_target(y);
    const double u = uniform01(rng);
    const bool accept = u < mh_accept_probability(lp, lq);
    if (accept) {
      x = y;
      lp = lq;
    }
    res.chain.accepted.push_back(accept ? 1 : 0);
    batch_acc += accept;
    ++batch_n;
    if (it < burn) acc_burn += accept;
    else {
      acc_kept += accept;
      res.kept.row(static_cast<Eigen::Index>(it - burn)) = x.transpose();
    }
    if (batch_n == cfg.adapt_batch) {
      const double rate = static_cast<double>(batch_acc) / static_cast<double>(batch_n);
      if (it < burn) {
        scale = adapt_scale(scale, rate, cfg.target_accept, cfg.scale_min, cfg.scale_max);
      } else if (batch_acc == 0) {
        ++res.diag.zero_accept_batches;
      }
      res.chain.scale_history.push_back(scale);
      batch_acc = batch_n = 0;
    }
  }
  res.chain.final_scale = scale;
  res.diag.final_scale = scale;
  res.diag.accept_burnin = burn ? static_cast<double>(acc_burn) / static_cast<double>(burn) : 0.0;
  res.diag.accept_kept = static_cast<double>(acc_kept) / static_cast<double>(cfg.keep_last);
  if (res.diag.zero_accept_batches)
    res.diag.warnings.push_back(std::to_string(res.diag.zero_accept_batches) +
                                " kept-window batches accepted no proposal");
  if (res.diag.accept_kept < 0.15 || res.diag.accept_kept > 0.7)
    res.diag.warnings.push_back("kept-window acceptance rate " + std::to_string(res.diag.accept_kept) +
                                " is far from the target");
  return res;
}

inline void fill_autocorr(MHDiagnostics& diag, const RowMat& theta) {
  diag.autocorr.clear();
  for (Eigen::Index j = 0; j < theta.cols(); ++j) {
    const Vec col = theta.col(j);
    try {
      const auto ac = autocorrelation(as_span(col), std::min<std::size_t>(10, static_cast<std::size_t>(col.size()) - 1));
      std::vector<double> picked;
      for (std::size_t l : {1u, 5u, 10u})
        picked.push_back(l < ac.size() ? ac[l] : std::numeric_limits<double>::quiet_NaN());
      diag.autocorr.push_back(picked);
    } catch (const std::exception&) {
      diag.autocorr.push_back({std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN()});
      diag.warnings.push_back("theta component " + std::to_string(j) + " is constant over the kept window");
    }
  }
}

// log N(eps; 0, I) + log L_N(X | g(lambda, eps)), up to a constant;
// -inf where g leaves the model support.
template <StatModel Model>
double log_target_eps(const PriorNetwork& net, const Model& model, const typename Model::Data& x, const Vec& eps) {
  const Vec th = net.forward(eps);
  double ll;
  try {
    ll = model.log_likelihood(x, model.point(as_span(th)));
  } catch (const DomainError&) {
    return kNegInf;
  }
  return -0.5 * eps.squaredNorm() + ll;
}

// Proposal covariance I - (1 - rho^2) P, with P the orthogonal projector
// onto the span of the latent directions that move theta at eps = 0.
// Steps along those directions shrink by rho; the others are untouched.
inline Mat structured_covariance(const PriorNetwork& net, double rho = 0.1) {
  const Vec zero = Vec::Zero(static_cast<Eigen::Index>(net.latent_dim()));
  const Mat J = net.jacobian_latent(as_span(zero));
  Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double tol = sv.size() ? sv[0] * 1e-10 : 0.0;
  Eigen::Index r = 0;
  while (r < sv.size() && sv[r] > tol) ++r;
  const Mat V = svd.matrixV().leftCols(r);
  const auto p = static_cast<Eigen::Index>(net.latent_dim());
  return Mat::Identity(p, p) - (1.0 - rho * rho) * V * V.transpose();
}

template <StatModel Model>
MHResult mh_run(const PriorNetwork& net, const Model& model, const typename Model::Data& x, const MHConfig& cfg,
                std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x3e7a);
  auto target = [&](const Vec& e) { return log_target_eps(net, model, x, e); };
  // start from the best of init_draws prior latents
  Vec best = Vec::Zero(static_cast<Eigen::Index>(net.latent_dim()));
  double best_lp = kNegInf;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg.init_draws); ++i) {
    Vec e(static_cast<Eigen::Index>(net.latent_dim()));
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = standard_normal(rng);
    const double lp = target(e);
    if (lp > best_lp) {
      best_lp = lp;
      best = e;
    }
  }
  if (!std::isfinite(best_lp)) throw std::runtime_error("no prior draw has positive posterior density");
  auto core = mh_core(target, best, cfg, rng);
  MHResult res;
  res.theta.resize(core.kept.rows(), static_cast<Eigen::Index>(net.output_dim()));
  Vec e(core.kept.cols());
  for (Eigen::Index i = 0; i < core.kept.rows(); ++i) {
    e = core.kept.row(i).transpose();
    res.theta.row(i) = net.forward(e).transpose();
  }
  res.chain = std::move(core.chain);
  res.chain.states = std::move(core.kept);
  res.diagnostics = std::move(core.diag);
  fill_autocorr(res.diagnostics, res.theta);
  return res;
}

}  // namespace varp
