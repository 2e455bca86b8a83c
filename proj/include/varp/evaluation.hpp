#pragma once

// Distances between sample sets, reference distributions, and the
// numerically integrated probit Jeffreys prior.

#include "varp/core.hpp"
#include "varp/parallel.hpp"
#include "varp/posterior_mh.hpp"
#include "varp/special.hpp"
#include "varp/stat_models.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

namespace varp {

// ---------------------------------------------------------------- MMD

inline constexpr std::size_t kMmdRowCap = 20000;
inline constexpr Eigen::Index kMmdTile = 2000;

namespace detail {

// sum over the tile pair of exp(-0.5 |x_i - y_j|^2)
inline double kernel_block_sum(const RowMat& a, const Vec& na, const RowMat& b, const Vec& nb, bool same_block) {
  const Mat d2 = (na.replicate(1, b.rows()) + nb.transpose().replicate(a.rows(), 1) - 2.0 * a * b.transpose());
  double s = 0.0;
  for (Eigen::Index j = 0; j < d2.cols(); ++j)
    for (Eigen::Index i = same_block ? j + 1 : 0; i < d2.rows(); ++i) s += std::exp(-0.5 * std::max(0.0, d2(i, j)));
  return s;
}

// sum_{i != j} k(x_i, x_j) when `y` is null, else sum_{i, j} k(x_i, y_j).
inline double kernel_sum(const RowMat& x, const RowMat* y) {
  const Vec nx = x.rowwise().squaredNorm();
  double total = 0.0;
  if (!y) {
    for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += kMmdTile) {
      const Eigen::Index rn = std::min(kMmdTile, x.rows() - r0);
      const RowMat a = x.middleRows(r0, rn);
      const Vec na = nx.segment(r0, rn);
      for (Eigen::Index c0 = 0; c0 <= r0; c0 += kMmdTile) {
        const Eigen::Index cn = std::min(kMmdTile, x.rows() - c0);
        const double s = kernel_block_sum(a, na, x.middleRows(c0, cn), nx.segment(c0, cn), c0 == r0);
        total += 2.0 * s;  // the mirrored block (or triangle) contributes the same sum
      }
    }
    return total;
  }
  const Vec ny = y->rowwise().squaredNorm();
  for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += kMmdTile) {
    const Eigen::Index rn = std::min(kMmdTile, x.rows() - r0);
    const RowMat a = x.middleRows(r0, rn);
    for (Eigen::Index c0 = 0; c0 < y->rows(); c0 += kMmdTile) {
      const Eigen::Index cn = std::min(kMmdTile, y->rows() - c0);
      total += kernel_block_sum(a, nx.segment(r0, rn), y->middleRows(c0, cn), ny.segment(c0, cn), false);
    }
  }
  return total;
}

inline RowMat last_rows(const RowMat& m, std::size_t cap) {
  const auto n = std::min<Eigen::Index>(m.rows(), static_cast<Eigen::Index>(cap));
  return m.bottomRows(n);
}

}  // namespace detail

// Unbiased MMD^2 with kernel exp(-0.5 |x - y|^2), on at most the last
// 2e4 rows of each input. The value may be negative.
inline double mmd2_unbiased(const RowMat& xs_in, const RowMat& ys_in, std::size_t row_cap = kMmdRowCap) {
  if (xs_in.rows() < 2 || ys_in.rows() < 2) throw std::invalid_argument("mmd needs at least two rows per sample");
  if (xs_in.cols() != ys_in.cols()) throw std::invalid_argument("mmd samples differ in dimension");
  const RowMat xs = detail::last_rows(xs_in, row_cap), ys = detail::last_rows(ys_in, row_cap);
  const double m = static_cast<double>(xs.rows()), n = static_cast<double>(ys.rows());
  const double kxx = detail::kernel_sum(xs, nullptr), kyy = detail::kernel_sum(ys, nullptr);
  const double kxy = detail::kernel_sum(xs, &ys);
  return kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n);
}

// Standard deviation of MMD^2 over random relabelings of the pooled
// sample: the spread expected when both sets share one distribution.
inline double mmd_null_scale(const RowMat& xs, const RowMat& ys, std::size_t permutations, std::uint64_t seed,
                             std::size_t row_cap = kMmdRowCap) {
  if (permutations < 2) throw std::invalid_argument("null scale needs >= 2 permutations");
  const RowMat a = detail::last_rows(xs, row_cap), b = detail::last_rows(ys, row_cap);
  RowMat pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pooled.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0x9e27);
  std::vector<double> stats;
  for (std::size_t k = 0; k < permutations; ++k) {
    std::shuffle(idx.begin(), idx.end(), rng);
    RowMat pa(a.rows(), a.cols()), pb(b.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) pa.row(i) = pooled.row(idx[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < b.rows(); ++i) pb.row(i) = pooled.row(idx[static_cast<std::size_t>(a.rows() + i)]);
    stats.push_back(mmd2_unbiased(pa, pb, row_cap));
  }
  const double mean = std::accumulate(stats.begin(), stats.end(), 0.0) / static_cast<double>(stats.size());
  double sq = 0.0;
  for (double s : stats) sq += (s - mean) * (s - mean);
  return std::sqrt(sq / static_cast<double>(stats.size() - 1));
}

// ---------------------------------------------------------------- ECDF

struct EcdfCurve {
  std::vector<double> support;  // sorted sample values

  double operator()(double x) const {
    const auto it = std::upper_bound(support.begin(), support.end(), x);
    return static_cast<double>(it - support.begin()) / static_cast<double>(support.size());
  }
};

inline EcdfCurve ecdf(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("ecdf of an empty sample");
  std::sort(samples.begin(), samples.end());
  return {std::move(samples)};
}

struct EcdfEnvelope {
  std::vector<double> grid, lo, hi;
};

inline EcdfEnvelope ecdf_envelope(const std::vector<EcdfCurve>& curves, std::vector<double> grid) {
  if (curves.empty()) throw std::invalid_argument("envelope of no curves");
  std::sort(grid.begin(), grid.end());
  EcdfEnvelope env{grid, std::vector<double>(grid.size(), 1.0), std::vector<double>(grid.size(), 0.0)};
  for (const auto& c : curves)
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double v = c(grid[i]);
      env.lo[i] = std::min(env.lo[i], v);
      env.hi[i] = std::max(env.hi[i], v);
    }
  return env;
}

// Envelope over the union of all supports.
inline EcdfEnvelope ecdf_envelope(const std::vector<EcdfCurve>& curves) {
  std::vector<double> grid;
  for (const auto& c : curves) grid.insert(grid.end(), c.support.begin(), c.support.end());
  return ecdf_envelope(curves, std::move(grid));
}

// ---------------------------------------------------------------- errors

inline double mean_norm_error(const RowMat& samples, const Vec& theta_true) {
  if (samples.rows() == 0) throw std::invalid_argument("mean norm error of an empty sample");
  if (samples.cols() != theta_true.size()) throw std::invalid_argument("sample and reference dimensions differ");
  double s = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) s += (samples.row(i).transpose() - theta_true).norm();
  return s / static_cast<double>(samples.rows());
}

// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw std::invalid_argument("ks of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks of an empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

inline std::vector<double> column(const RowMat& m, Eigen::Index j) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j);
  return out;
}

// ---------------------------------------------------------------- references

namespace reference {

inline RowMat dirichlet_sample(const Vec& gamma, std::size_t count, std::uint64_t seed) {
  for (Eigen::Index j = 0; j < gamma.size(); ++j)
    if (!(gamma[j] > 0.0)) throw std::invalid_argument("dirichlet parameters must be positive");
  Rng rng = make_rng(seed, 0xd1c7);
  RowMat out(static_cast<Eigen::Index>(count), gamma.size());
  std::vector<std::gamma_distribution<double>> g;
  for (Eigen::Index j = 0; j < gamma.size(); ++j) g.emplace_back(gamma[j], 1.0);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < gamma.size(); ++j) {
      out(i, j) = g[static_cast<std::size_t>(j)](rng);
      s += out(i, j);
    }
    out.row(i) /= s;
  }
  return out;
}

// Jeffreys posterior parameters for the multinomial: 1/2 + column totals.
inline Vec dirichlet_posterior_params(const Multinomial::Data& d) {
  return (d.totals.array() + 0.5).matrix();
}

inline double beta_cdf(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return boost::math::cdf(boost::math::beta_distribution<double>(a, b), x);
}

inline double inverse_gamma_pdf(double shape, double scale, double x) {
  if (!(shape > 0.0 && scale > 0.0)) throw std::invalid_argument("inverse gamma parameters must be positive");
  if (x <= 0.0) return 0.0;
  return std::exp(shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x);
}

inline double inverse_gamma_cdf(double shape, double scale, double x) {
  if (!(shape > 0.0 && scale > 0.0)) throw std::invalid_argument("inverse gamma parameters must be positive");
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_q(shape, scale / x);
}

inline std::vector<double> inverse_gamma_sample(double shape, double scale, std::size_t count, std::uint64_t seed) {
  if (!(shape > 0.0 && scale > 0.0)) throw std::invalid_argument("inverse gamma parameters must be positive");
  Rng rng = make_rng(seed, 0x1677);
  std::gamma_distribution<double> g(shape, 1.0 / scale);
  std::vector<double> out(count);
  for (auto& v : out) v = 1.0 / g(rng);
  return out;
}

inline double lognormal_cdf(double mu, double sigma, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::cdf(boost::math::lognormal_distribution<double>(mu, sigma), x);
}

// Gaussian-variance model with a(theta) = theta / (1 + theta^2):
// the constrained target prior J(theta) a(theta)^2 / K with K = 1/2.
inline double gaussvar_constrained_prior_pdf(double x) {
  if (x <= 0.0) return 0.0;
  const double d = 1.0 + x * x;
  return 2.0 * x / (d * d);
}

inline double gaussvar_constrained_prior_cdf(double x) {
  if (x <= 0.0) return 0.0;
  return x * x / (1.0 + x * x);
}

// Posterior proportional to a(theta)^2 * IG(theta; N/2, S/2).
class GaussVarConstrainedPosterior {
 public:
  GaussVarConstrainedPosterior(double N, double S) : shape_(0.5 * N), scale_(0.5 * S) {
    if (!(N > 0.0 && S > 0.0)) throw std::invalid_argument("posterior needs N > 0 and S > 0");
    norm_ = integrate(0.0, std::numeric_limits<double>::infinity());
  }

  static double weight(double x) {
    const double a = x / (1.0 + x * x);
    return a * a;
  }

  double pdf(double x) const { return x <= 0.0 ? 0.0 : weight(x) * inverse_gamma_pdf(shape_, scale_, x) / norm_; }
  double cdf(double x) const { return x <= 0.0 ? 0.0 : std::min(1.0, integrate(0.0, x) / norm_); }
  double normalizer() const { return norm_; }

  // E_IG[a^2] from IG draws, with its standard error.
  std::pair<double, double> mc_normalizer(std::size_t n, std::uint64_t seed) const {
    const auto xs = inverse_gamma_sample(shape_, scale_, n, seed);
    double s = 0.0, sq = 0.0;
    for (double x : xs) {
      const double w = weight(x);
      s += w;
      sq += w * w;
    }
    const double m = s / static_cast<double>(n);
    return {m, std::sqrt(std::max(0.0, sq / static_cast<double>(n) - m * m) / static_cast<double>(n - 1))};
  }

 private:
  double integrate(double lo, double hi) const {
    auto f = [this](double x) { return weight(x) * inverse_gamma_pdf(shape_, scale_, x); };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-12);
  }

  double shape_, scale_, norm_;
};

}  // namespace reference

// ---------------------------------------------------------------- probit Jeffreys

struct JeffreysQuadrature {
  std::size_t nodes = 400;        // Simpson intervals (even)
  double gamma_half_width = 12.0;
  double u_sigmas = 12.0;
  double refine_tolerance = 0.01;  // relative disagreement flagged
};

struct FisherResult {
  Eigen::Matrix2d info;
  bool converged = true;
};

// Fisher information of one probit observation,
//   E_a[w(gamma) v v^T], w = phi^2 / (Phi (1 - Phi)), v = grad_theta gamma,
// by Simpson's rule in gamma over the overlap of [-12, 12] with the
// image of mu_a +- 12 sigma_a.
inline Eigen::Matrix2d probit_fisher_simpson(const Probit& model, double t1, double t2, std::size_t nodes,
                                             const JeffreysQuadrature& q) {
  const double sigma = std::sqrt(model.sigma2_a()), lt1 = std::log(t1);
  const double glo = std::max(-q.gamma_half_width, (model.mu_a() - q.u_sigmas * sigma - lt1) / t2);
  const double ghi = std::min(q.gamma_half_width, (model.mu_a() + q.u_sigmas * sigma - lt1) / t2);
  Eigen::Matrix2d I = Eigen::Matrix2d::Zero();
  if (!(ghi > glo)) return I;
  const std::size_t n = nodes + (nodes % 2);
  const double h = (ghi - glo) / static_cast<double>(n);
  for (std::size_t k = 0; k <= n; ++k) {
    const double g = glo + h * static_cast<double>(k);
    const double u = lt1 + t2 * g;
    const double dens = special::normal_pdf((u - model.mu_a()) / sigma) / sigma * t2;  // du = t2 dgamma
    const double w = special::mills_ratio(g) * special::mills_ratio(-g);
    const double v1 = -1.0 / (t1 * t2), v2 = -g / t2;
    const double c = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    const double f = c * w * dens;
    I(0, 0) += f * v1 * v1;
    I(0, 1) += f * v1 * v2;
    I(1, 1) += f * v2 * v2;
  }
  I *= h / 3.0;
  I(1, 0) = I(0, 1);
  return I;
}

inline FisherResult probit_fisher(const Probit& model, double t1, double t2, const JeffreysQuadrature& q = {}) {
  FisherResult r;
  r.info = probit_fisher_simpson(model, t1, t2, q.nodes, q);
  const Eigen::Matrix2d fine = probit_fisher_simpson(model, t1, t2, 2 * q.nodes, q);
  const double det_c = r.info.determinant(), det_f = fine.determinant();
  r.converged = std::abs(det_c - det_f) <= q.refine_tolerance * std::abs(det_f) &&
                (r.info - fine).cwiseAbs().maxCoeff() <= q.refine_tolerance * fine.cwiseAbs().maxCoeff();
  r.info = fine;
  return r;
}

// log sqrt(det I(theta)).
inline double probit_log_jeffreys(const Probit& model, double t1, double t2, const JeffreysQuadrature& q = {}) {
  const auto r = probit_fisher(model, t1, t2, q);
  return 0.5 * std::log(r.info.determinant());
}

// d log J / d log t2 at (t1, t2) by a one-sided difference over t2 * factor.
inline double probit_jeffreys_slope(const Probit& model, double t1, double t2, double factor = 1.1,
                                    const JeffreysQuadrature& q = {}) {
  return (probit_log_jeffreys(model, t1, t2 * factor, q) - probit_log_jeffreys(model, t1, t2, q)) / std::log(factor);
}

struct GridSpec {
  std::size_t n1 = 200, n2 = 200;
  double t1_lo = std::exp(-3.0), t1_hi = std::exp(3.0);
  double t2_lo = 1e-2, t2_hi = 10.0;
};

// Log-uniform grid of log J, bilinear interpolation in (log t1, log t2).
class ProbitJeffreysGrid {
 public:
  ProbitJeffreysGrid(const Probit& model, const GridSpec& g = {}, const JeffreysQuadrature& q = {}, unsigned threads = 1)
      : spec_(g) {
    if (!(g.t1_lo > 0.0 && g.t2_lo > 0.0 && g.t1_hi > g.t1_lo && g.t2_hi > g.t2_lo && g.n1 >= 2 && g.n2 >= 2))
      throw std::invalid_argument("jeffreys grid must lie strictly inside the positive quadrant");
    l1_ = linspace(std::log(g.t1_lo), std::log(g.t1_hi), g.n1);
    l2_ = linspace(std::log(g.t2_lo), std::log(g.t2_hi), g.n2);
    logj_.resize(static_cast<Eigen::Index>(g.n1), static_cast<Eigen::Index>(g.n2));
    std::vector<char> bad(g.n1 * g.n2, 0), notpd(g.n1 * g.n2, 0);
    parallel_for(g.n1, threads, [&](std::size_t i) {
      for (std::size_t j = 0; j < g.n2; ++j) {
        const auto r = probit_fisher(model, std::exp(l1_[i]), std::exp(l2_[j]), q);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(r.info);
        if (!(es.eigenvalues().minCoeff() > 0.0)) notpd[i * g.n2 + j] = 1;
        bad[i * g.n2 + j] = !r.converged;
        logj_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.5 * std::log(r.info.determinant());
      }
    });
    unconverged_ = static_cast<std::size_t>(std::count(bad.begin(), bad.end(), 1));
    not_pd_ = static_cast<std::size_t>(std::count(notpd.begin(), notpd.end(), 1));
  }

  double log_density(double t1, double t2) const {
    if (!(t1 > 0.0 && t2 > 0.0)) return kNegInf;
    const double a = std::log(t1), b = std::log(t2);
    if (a < l1_.front() || a > l1_.back() || b < l2_.front() || b > l2_.back()) return kNegInf;
    const auto [i, wa] = locate(l1_, a);
    const auto [j, wb] = locate(l2_, b);
    const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
    return (1 - wa) * (1 - wb) * logj_(I, J) + wa * (1 - wb) * logj_(I + 1, J) + (1 - wa) * wb * logj_(I, J + 1) +
           wa * wb * logj_(I + 1, J + 1);
  }

  std::size_t unconverged_nodes() const { return unconverged_; }
  std::size_t non_pd_nodes() const { return not_pd_; }
  const GridSpec& spec() const { return spec_; }
  Box log_box() const {
    Box b{Vec(2), Vec(2)};
    b.lo << l1_.front(), l2_.front();
    b.hi << l1_.back(), l2_.back();
    return b;
  }

  void write_csv(std::ostream& os) const {
    os << "theta1,theta2,log_density\n";
    os.precision(17);
    for (std::size_t i = 0; i < l1_.size(); ++i)
      for (std::size_t j = 0; j < l2_.size(); ++j)
        os << std::exp(l1_[i]) << "," << std::exp(l2_[j]) << ","
           << logj_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << "\n";
  }

 private:
  static std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
  }
  static std::pair<std::size_t, double> locate(const std::vector<double>& g, double x) {
    auto i = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), x) - g.begin());
    i = std::clamp<std::size_t>(i, 1, g.size() - 1) - 1;
    return {i, (x - g[i]) / (g[i + 1] - g[i])};
  }

  GridSpec spec_;
  std::vector<double> l1_, l2_;
  Mat logj_;
  std::size_t unconverged_ = 0, not_pd_ = 0;
};

// ---------------------------------------------------------------- MH on theta

struct ThetaMHResult {
  RowMat theta;
  MHDiagnostics diagnostics;
};

// Adaptive MH on u = log theta targeting prior(theta) L_N(X | theta),
// reflected at `log_box`. Proposals leaving the box are counted and
// reported as a warning.
template <StatModel Model>
ThetaMHResult mh_theta_reference(const std::function<double(const Vec&)>& log_prior, const Model& model,
                                 const typename Model::Data& x, const Box& log_box, const MHConfig& cfg,
                                 std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7e7a);
  auto target = [&](const Vec& u) {
    const Vec th = u.array().exp();
    const double lp = log_prior(th);
    if (!std::isfinite(lp)) return kNegInf;
    try {
      return lp + model.log_likelihood(x, model.point(as_span(th))) + u.sum();
    } catch (const DomainError&) {
      return kNegInf;
    }
  };
  const auto d = log_box.lo.size();
  Vec best(d);
  double best_lp = kNegInf;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg.init_draws); ++i) {
    Vec u(d);
    for (Eigen::Index k = 0; k < d; ++k) u[k] = log_box.lo[k] + (log_box.hi[k] - log_box.lo[k]) * uniform01(rng);
    const double lp = target(u);
    if (lp > best_lp) {
      best_lp = lp;
      best = u;
    }
  }
  if (!std::isfinite(best_lp)) throw std::runtime_error("no starting point with positive posterior density");
  auto core = mh_core(target, best, cfg, rng, log_box);
  ThetaMHResult res;
  res.theta = core.kept.array().exp();
  res.diagnostics = std::move(core.diag);
  if (res.diagnostics.reflections)
    res.diagnostics.warnings.push_back(std::to_string(res.diagnostics.reflections) +
                                       " proposals left the grid support and were reflected");
  fill_autocorr(res.diagnostics, res.theta);
  return res;
}

}  // namespace varp
