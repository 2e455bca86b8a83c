#pragma once

// Benchmark likelihoods. Log-likelihoods drop every theta-independent
// constant, so ratios of kernels equal ratios of likelihoods.

#include "varp/core.hpp"
#include "varp/special.hpp"

#include <algorithm>
#include <concepts>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace varp {

class Multinomial {
 public:
  struct Data {
    RowMat counts;  // N x q
    Vec totals;     // column sums
    std::size_t size() const { return static_cast<std::size_t>(counts.rows()); }
  };
  struct Point {
    Vec theta;
    Vec log_theta;
  };

  Multinomial(int n, int q) : n_(n), q_(q) {
    if (n < 1) throw std::invalid_argument("multinomial: n must be >= 1");
    if (q < 2) throw std::invalid_argument("multinomial: q must be >= 2");
  }

  int trials() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(q_); }

  Point point(std::span<const double> theta) const {
    if (theta.size() != dim()) throw std::invalid_argument("multinomial: theta has wrong dimension");
    Point pt{to_vec(theta), Vec(q_)};
    double sum = 0.0;
    for (int j = 0; j < q_; ++j) {
      if (!(theta[j] > 0.0) || !std::isfinite(theta[j])) throw DomainError("multinomial: theta must lie in the open simplex");
      pt.log_theta[j] = std::log(theta[j]);
      sum += theta[j];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("multinomial: theta must sum to 1");
    return pt;
  }

  static Data make_data(RowMat counts) {
    Data d{std::move(counts), {}};
    d.totals = d.counts.colwise().sum().transpose();
    return d;
  }

  Data make_data_checked(RowMat counts) const {
    if (counts.cols() != q_) throw std::invalid_argument("multinomial: count rows must have q entries");
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j)
        if (counts(i, j) < 0 || counts(i, j) != std::floor(counts(i, j)))
          throw std::invalid_argument("multinomial: counts must be nonnegative integers");
      if (counts.row(i).sum() != n_) throw std::invalid_argument("multinomial: each row must sum to n");
    }
    return make_data(std::move(counts));
  }

  // Sequential conditional binomials.
  Data simulate(const Point& pt, std::size_t N, Rng& rng) const {
    RowMat counts = RowMat::Zero(static_cast<Eigen::Index>(N), q_);
    for (std::size_t i = 0; i < N; ++i) {
      int left = n_;
      double mass = 1.0;
      for (int j = 0; j < q_ - 1 && left > 0; ++j) {
        const double pr = std::clamp(pt.theta[j] / mass, 0.0, 1.0);
        const int c = std::binomial_distribution<int>(left, pr)(rng);
        counts(static_cast<Eigen::Index>(i), j) = c;
        left -= c;
        mass -= pt.theta[j];
        if (mass <= 0.0) break;
      }
      counts(static_cast<Eigen::Index>(i), q_ - 1) += left;
    }
    return make_data(std::move(counts));
  }

  double log_likelihood(const Data& d, const Point& pt) const {
    if (d.size() == 0) return 0.0;
    return d.totals.dot(pt.log_theta);
  }

  void score(const Data& d, const Point& pt, Vec& out) const {
    out = d.totals.cwiseQuotient(pt.theta);
  }

  // Count average, pulled into the interior with the softmax guard.
  std::optional<Vec> exact_mle(const Data& d, double guard = 1e-6) const {
    if (d.size() == 0) throw std::invalid_argument("mle of an empty dataset");
    Vec th = d.totals / (static_cast<double>(n_) * static_cast<double>(d.size()));
    th = (1.0 - static_cast<double>(q_) * guard) * th.array() + guard;
    return th;
  }

 private:
  int n_, q_;
};

class Probit {
 public:
  struct Data {
    std::vector<int> z;
    std::vector<double> a;
    std::vector<double> log_a;
    std::size_t size() const { return z.size(); }
  };
  struct Point {
    Vec theta;
    double log_t1 = 0.0;
    double inv_t2 = 0.0;
  };

  Probit(double mu_a = 0.0, double sigma2_a = 1.0) : mu_a_(mu_a), sigma2_a_(sigma2_a) {
    if (!(sigma2_a > 0.0)) throw std::invalid_argument("probit: sigma2_a must be positive");
  }

  double mu_a() const { return mu_a_; }
  double sigma2_a() const { return sigma2_a_; }
  std::size_t dim() const { return 2; }

  Point point(std::span<const double> theta) const {
    if (theta.size() != 2) throw std::invalid_argument("probit: theta has wrong dimension");
    if (!(theta[0] > 0.0) || !(theta[1] > 0.0) || !std::isfinite(theta[0]) || !std::isfinite(theta[1]))
      throw DomainError("probit: theta must be positive");
    return {to_vec(theta), std::log(theta[0]), 1.0 / theta[1]};
  }

  static Data make_data(std::vector<int> z, std::vector<double> a) {
    if (z.size() != a.size()) throw std::invalid_argument("probit: z and a differ in length");
    Data d{std::move(z), std::move(a), {}};
    d.log_a.reserve(d.a.size());
    for (std::size_t i = 0; i < d.a.size(); ++i) {
      if (!(d.a[i] > 0.0)) throw std::invalid_argument("probit: a must be positive");
      if (d.z[i] != 0 && d.z[i] != 1) throw std::invalid_argument("probit: z must be 0 or 1");
      d.log_a.push_back(std::log(d.a[i]));
    }
    return d;
  }

  // P_f(a) = Phi((log a - log theta1) / theta2)
  double failure_probability(const Point& pt, double a) const {
    return special::normal_cdf((std::log(a) - pt.log_t1) * pt.inv_t2);
  }

  Data simulate(const Point& pt, std::size_t N, Rng& rng) const {
    std::vector<int> z(N);
    std::vector<double> a(N);
    const double sd = std::sqrt(sigma2_a_);
    for (std::size_t i = 0; i < N; ++i) {
      const double la = mu_a_ + sd * standard_normal(rng);
      a[i] = std::exp(la);
      const double pf = special::normal_cdf((la - pt.log_t1) * pt.inv_t2);
      z[i] = uniform01(rng) < pf ? 1 : 0;
    }
    return make_data(std::move(z), std::move(a));
  }

  double log_likelihood(const Data& d, const Point& pt) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double g = (d.log_a[i] - pt.log_t1) * pt.inv_t2;
      acc += special::log_normal_cdf(d.z[i] ? g : -g);
    }
    return acc;
  }

  void score(const Data& d, const Point& pt, Vec& out) const {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double g = (d.log_a[i] - pt.log_t1) * pt.inv_t2;
      // d/dgamma of the per-observation log-likelihood
      const double h = d.z[i] ? special::mills_ratio(g) : -special::mills_ratio(-g);
      s1 += h;
      s2 += h * g;
    }
    out.resize(2);
    out[0] = -s1 * pt.inv_t2 / pt.theta[0];
    out[1] = -s2 * pt.inv_t2;
  }

  std::optional<Vec> exact_mle(const Data& d, double = 0.0) const {
    if (d.size() == 0) throw std::invalid_argument("mle of an empty dataset");
    return std::nullopt;
  }

  // True when a threshold on a separates the outcomes: every a with Z=0
  // lies below every a with Z=1. The likelihood is then maximal (=1) in
  // the limit theta2 -> 0 and the posterior under an improper prior in
  // theta2 fails to normalize.
  static bool is_degenerate(const Data& d) {
    double max0 = -std::numeric_limits<double>::infinity();
    double min1 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.z[i]) min1 = std::min(min1, d.a[i]);
      else max0 = std::max(max0, d.a[i]);
    }
    return max0 < min1;
  }

 private:
  double mu_a_, sigma2_a_;
};

class GaussVar {
 public:
  struct Data {
    std::vector<double> x;
    double ss = 0.0;  // sum of (x - mu)^2
    std::size_t size() const { return x.size(); }
  };
  struct Point {
    Vec theta;
    double log_t = 0.0;
  };

  explicit GaussVar(double mu = 0.0) : mu_(mu) {}

  double mu() const { return mu_; }
  std::size_t dim() const { return 1; }

  Point point(std::span<const double> theta) const {
    if (theta.size() != 1) throw std::invalid_argument("gaussvar: theta has wrong dimension");
    if (!(theta[0] > 0.0) || !std::isfinite(theta[0])) throw DomainError("gaussvar: variance must be positive");
    return {to_vec(theta), std::log(theta[0])};
  }

  Data make_data(std::vector<double> x) const {
    Data d{std::move(x), 0.0};
    for (double v : d.x) {
      if (!std::isfinite(v)) throw std::invalid_argument("gaussvar: observations must be finite");
      d.ss += (v - mu_) * (v - mu_);
    }
    return d;
  }

  Data simulate(const Point& pt, std::size_t N, Rng& rng) const {
    std::vector<double> x(N);
    const double sd = std::sqrt(pt.theta[0]);
    for (auto& v : x) v = mu_ + sd * standard_normal(rng);
    return make_data(std::move(x));
  }

  double log_likelihood(const Data& d, const Point& pt) const {
    const double n = static_cast<double>(d.size());
    return -0.5 * n * pt.log_t - d.ss / (2.0 * pt.theta[0]);
  }

  void score(const Data& d, const Point& pt, Vec& out) const {
    const double t = pt.theta[0];
    out.resize(1);
    out[0] = -0.5 * static_cast<double>(d.size()) / t + d.ss / (2.0 * t * t);
  }

  // Maximizer of the variance likelihood, sum (x - mu)^2 / N.
  std::optional<Vec> exact_mle(const Data& d, double = 0.0) const {
    if (d.size() == 0) throw std::invalid_argument("mle of an empty dataset");
    Vec th(1);
    th[0] = d.ss / static_cast<double>(d.size());
    if (th[0] <= 0.0) return std::nullopt;
    return th;
  }

 private:
  double mu_;
};

// X_i ~ Bernoulli(theta). Small enough that every integral over the data
// space is a finite sum; used as the reference model for the estimators.
class BernoulliToy {
 public:
  struct Data {
    std::vector<int> x;
    int ones = 0;
    std::size_t size() const { return x.size(); }
  };
  struct Point {
    Vec theta;
    double log_t = 0.0;
    double log_1mt = 0.0;
  };

  std::size_t dim() const { return 1; }

  Point point(std::span<const double> theta) const {
    if (theta.size() != 1) throw std::invalid_argument("bernoulli: theta has wrong dimension");
    if (!(theta[0] > 0.0 && theta[0] < 1.0)) throw DomainError("bernoulli: theta must lie in (0, 1)");
    return {to_vec(theta), std::log(theta[0]), std::log1p(-theta[0])};
  }

  static Data make_data(std::vector<int> x) {
    Data d{std::move(x), 0};
    for (int v : d.x) {
      if (v != 0 && v != 1) throw std::invalid_argument("bernoulli: outcomes must be 0 or 1");
      d.ones += v;
    }
    return d;
  }

  Data simulate(const Point& pt, std::size_t N, Rng& rng) const {
    std::vector<int> x(N);
    for (auto& v : x) v = uniform01(rng) < pt.theta[0] ? 1 : 0;
    return make_data(std::move(x));
  }

  double log_likelihood(const Data& d, const Point& pt) const {
    const double k = d.ones, m = static_cast<double>(d.size()) - d.ones;
    return (k > 0 ? k * pt.log_t : 0.0) + (m > 0 ? m * pt.log_1mt : 0.0);
  }

  void score(const Data& d, const Point& pt, Vec& out) const {
    const double t = pt.theta[0];
    out.resize(1);
    out[0] = d.ones / t - (static_cast<double>(d.size()) - d.ones) / (1.0 - t);
  }

  std::optional<Vec> exact_mle(const Data& d, double = 0.0) const {
    if (d.size() == 0) throw std::invalid_argument("mle of an empty dataset");
    Vec th(1);
    th[0] = static_cast<double>(d.ones) / static_cast<double>(d.size());
    return th;
  }

  // log L at the count average; 0 log 0 = 0 covers the boundary.
  double max_log_likelihood(const Data& d) const {
    const double n = static_cast<double>(d.size());
    const double k = d.ones, m = n - k;
    return (k > 0 ? k * std::log(k / n) : 0.0) + (m > 0 ? m * std::log(m / n) : 0.0);
  }
};

// sup_theta log L(X | theta) when it has a closed form.
template <typename Model>
std::optional<double> max_log_likelihood(const Model& model, const typename Model::Data& d, double guard = 1e-6) {
  if constexpr (requires { model.max_log_likelihood(d); }) {
    return model.max_log_likelihood(d);
  } else {
    const auto th = model.exact_mle(d, guard);
    if (!th) return std::nullopt;
    return model.log_likelihood(d, model.point(as_span(*th)));
  }
}

template <typename Model>
concept StatModel = requires(const Model& m, const typename Model::Data& d, const typename Model::Point& pt,
                             std::span<const double> th, Rng& rng, Vec& out) {
  { m.dim() } -> std::convertible_to<std::size_t>;
  { m.point(th) } -> std::same_as<typename Model::Point>;
  { m.simulate(pt, std::size_t{1}, rng) } -> std::same_as<typename Model::Data>;
  { m.log_likelihood(d, pt) } -> std::convertible_to<double>;
  m.score(d, pt, out);
  { d.size() } -> std::convertible_to<std::size_t>;
};

// Convenience wrappers taking theta directly.
template <StatModel Model>
typename Model::Data sample_data(const Model& m, std::span<const double> theta, std::size_t N, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xda7a);
  return m.simulate(m.point(theta), N, rng);
}

template <StatModel Model>
double log_likelihood(const Model& m, const typename Model::Data& d, std::span<const double> theta) {
  return m.log_likelihood(d, m.point(theta));
}

template <StatModel Model>
Vec grad_log_likelihood(const Model& m, const typename Model::Data& d, std::span<const double> theta) {
  Vec out;
  m.score(d, m.point(theta), out);
  return out;
}

// CSV: multinomial -> x1..xq, probit -> z,a, gaussvar -> x.

namespace detail {
inline std::vector<std::vector<double>> read_csv_rows(const std::string& path, std::size_t expected_cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset file is empty: " + path);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != expected_cols) throw std::runtime_error("dataset row has wrong number of columns: " + path);
    rows.push_back(std::move(row));
  }
  return rows;
}
}  // namespace detail

inline void write_csv(std::ostream& os, const Multinomial::Data& d) {
  for (Eigen::Index j = 0; j < d.counts.cols(); ++j) os << (j ? "," : "") << "x" << j + 1;
  os << "\n";
  for (Eigen::Index i = 0; i < d.counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.counts.cols(); ++j) os << (j ? "," : "") << static_cast<long>(d.counts(i, j));
    os << "\n";
  }
}

inline void write_csv(std::ostream& os, const Probit::Data& d) {
  os << "z,a\n";
  os.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) os << d.z[i] << "," << d.a[i] << "\n";
}

inline void write_csv(std::ostream& os, const GaussVar::Data& d) {
  os << "x\n";
  os.precision(17);
  for (double v : d.x) os << v << "\n";
}

inline Multinomial::Data read_dataset(const Multinomial& m, const std::string& path) {
  const auto rows = detail::read_csv_rows(path, m.dim());
  RowMat counts(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.dim()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m.make_data_checked(std::move(counts));
}

inline Probit::Data read_dataset(const Probit&, const std::string& path) {
  const auto rows = detail::read_csv_rows(path, 2);
  std::vector<int> z;
  std::vector<double> a;
  for (const auto& r : rows) {
    z.push_back(static_cast<int>(r[0]));
    a.push_back(r[1]);
  }
  return Probit::make_data(std::move(z), std::move(a));
}

inline GaussVar::Data read_dataset(const GaussVar& m, const std::string& path) {
  const auto rows = detail::read_csv_rows(path, 1);
  std::vector<double> x;
  for (const auto& r : rows) x.push_back(r[0]);
  return m.make_data(std::move(x));
}

}  // namespace varp
