#include "varp/evaluation.hpp"
#include "varp/posterior_mh.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <cmath>

using namespace varp;

namespace {

MHConfig small_config(std::size_t total = 100000, std::size_t keep = 50000) {
  MHConfig c;
  c.total_iters = total;
  c.keep_last = keep;
  return c;
}

// Standard error of a correlated chain mean by non-overlapping batch means.
double batch_means_se(const std::vector<double>& x, std::size_t batches = 50) {
  const std::size_t len = x.size() / batches;
  std::vector<double> m(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < len; ++i) m[b] += x[b * len + i];
    m[b] /= len;
  }
  double mean = 0;
  for (double v : m) mean += v;
  mean /= batches;
  double sq = 0;
  for (double v : m) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / (batches - 1) / batches);
}

RowMat thin(const RowMat& m, std::size_t every) {
  RowMat out(m.rows() / static_cast<Eigen::Index>(every), m.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(i * static_cast<Eigen::Index>(every));
  return out;
}

}  // namespace

TEST(AdaptScale, UpdateRule) {
  EXPECT_DOUBLE_EQ(adapt_scale(0.7, 0.40), 0.7);
  EXPECT_NEAR(adapt_scale(1.0, 1.0) , std::exp(0.6), 1e-15);
  EXPECT_NEAR(std::exp(0.6), 1.822, 1e-3);
  EXPECT_NEAR(adapt_scale(1.0, 0.0), std::exp(-0.4), 1e-15);
  EXPECT_NEAR(std::exp(-0.4), 0.670, 1e-3);
  EXPECT_DOUBLE_EQ(adapt_scale(1e-6, 0.0), 1e-6);
  EXPECT_DOUBLE_EQ(adapt_scale(1e3, 1.0), 1e3);
}

TEST(Autocorrelation, WhiteNoise) {
  Rng rng = make_rng(1);
  std::vector<double> x(20000);
  for (auto& v : x) v = standard_normal(rng);
  const auto ac = autocorrelation(x, 10);
  EXPECT_DOUBLE_EQ(ac[0], 1.0);
  for (std::size_t l = 1; l <= 10; ++l) EXPECT_LE(std::abs(ac[l]), 3 / std::sqrt(20000.0));
}

TEST(Autocorrelation, ArOneDecaysGeometrically) {
  Rng rng = make_rng(2);
  const std::size_t n = 100000;
  std::vector<double> x(n);
  x[0] = standard_normal(rng);
  for (std::size_t i = 1; i < n; ++i) x[i] = 0.5 * x[i - 1] + std::sqrt(0.75) * standard_normal(rng);
  const auto ac = autocorrelation(x, 5);
  for (std::size_t l = 0; l <= 5; ++l) EXPECT_NEAR(ac[l], std::pow(0.5, l), 3 / std::sqrt(static_cast<double>(n)));
}

TEST(Autocorrelation, Errors) {
  EXPECT_THROW(autocorrelation(std::vector<double>(50, 2.0), 5), std::domain_error);
  EXPECT_THROW(autocorrelation(std::vector<double>{1, 2, 3}, 3), std::invalid_argument);
}

// Three states, uniform proposal to either other state: the transition
// matrix built from the acceptance rule satisfies detailed balance.
TEST(Acceptance, DetailedBalanceOnThreeStates) {
  const double pi[3] = {0.2, 0.5, 0.3};
  double P[3][3] = {};
  for (int i = 0; i < 3; ++i) {
    double stay = 1.0;
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      P[i][j] = 0.5 * mh_accept_probability(std::log(pi[i]), std::log(pi[j]));
      stay -= P[i][j];
    }
    P[i][i] = stay;
  }
  for (int i = 0; i < 3; ++i) {
    double flow = 0.0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(pi[i] * P[i][j], pi[j] * P[j][i], 1e-15);
      flow += pi[j] * P[j][i];
    }
    EXPECT_NEAR(flow, pi[i], 1e-15);
  }
  EXPECT_DOUBLE_EQ(mh_accept_probability(0.0, kNegInf), 0.0);
  EXPECT_DOUBLE_EQ(mh_accept_probability(kNegInf, -3.0), 1.0);
}

TEST(MHConfig, Validation) {
  auto c = small_config(100, 200);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(100, 0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.target_accept = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.covariance = Mat::Identity(3, 3);
  Rng rng = make_rng(1);
  EXPECT_THROW(mh_core([](const Vec&) { return 0.0; }, Vec::Zero(2), c, rng), ConfigError);
  c.covariance = -Mat::Identity(2, 2);
  EXPECT_THROW(mh_core([](const Vec&) { return 0.0; }, Vec::Zero(2), c, rng), ConfigError);
}

TEST(MhCore, KeptWindowAndSeparateRates) {
  Rng rng = make_rng(3);
  const auto c = small_config(3000, 1000);
  const auto r = mh_core([](const Vec& x) { return -0.5 * x.squaredNorm(); }, Vec::Zero(2), c, rng);
  EXPECT_EQ(r.kept.rows(), 1000);
  EXPECT_EQ(r.chain.accepted.size(), 3000u);
  EXPECT_EQ(r.chain.scale_history.size(), 30u);
  EXPECT_GT(r.diag.accept_burnin, 0.0);
  EXPECT_GE(r.diag.accept_kept, 0.25);
  EXPECT_LE(r.diag.accept_kept, 0.55);
  // scale frozen over the kept window
  for (std::size_t b = 20; b < 30; ++b) EXPECT_EQ(r.chain.scale_history[b], r.chain.scale_history[19]);
  EXPECT_TRUE(r.kept.allFinite());
}

TEST(MhCore, AllRejectedBatchesAreReported) {
  Rng rng = make_rng(4);
  const auto r = mh_core([](const Vec& x) { return x.norm() == 0.0 ? 0.0 : kNegInf; }, Vec::Zero(1),
                         small_config(1000, 500), rng);
  EXPECT_EQ(r.diag.zero_accept_batches, 5u);
  EXPECT_FALSE(r.diag.warnings.empty());
  EXPECT_EQ(r.diag.accept_kept, 0.0);
}

TEST(MhCore, ReflectionKeepsStatesInsideTheBox) {
  Rng rng = make_rng(5);
  Box box{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
  const auto r = mh_core([](const Vec&) { return 0.0; }, Vec::Zero(2), small_config(5000, 2000), rng, box);
  EXPECT_GT(r.diag.reflections, 0u);
  EXPECT_LE(r.kept.cwiseAbs().maxCoeff(), 1.0);
  // uniform target on the box
  const double ks = ks_statistic(column(r.kept, 0), [](double x) { return std::clamp(0.5 * (x + 1), 0.0, 1.0); });
  EXPECT_LE(ks, 0.06);
}

TEST(LogTarget, EmptyDatasetRecoversLatentPrior) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(2, {{Activation::Exp, 1}});
  net.initialize(1, 0.3);
  const auto empty = model.make_data({});
  Vec e(2);
  e << 0.3, -1.1;
  EXPECT_DOUBLE_EQ(log_target_eps(net, model, empty, e), -0.5 * e.squaredNorm());
  const auto res = mh_run(net, model, empty, small_config(), 7);
  const auto& st = res.chain.states;
  for (Eigen::Index j = 0; j < 2; ++j)
    EXPECT_LE(ks_statistic(column(st, j), [](double x) { return special::normal_cdf(x); }), 0.02) << "component " << j;
}

TEST(LogTarget, OutsideSupportIsMinusInfinity) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(1, {{Activation::Identity, 1}});
  net.output_weight_mut()(0, 0) = 1.0;
  const auto x = model.make_data({0.5});
  EXPECT_EQ(log_target_eps(net, model, x, Vec::Constant(1, -0.2)), kNegInf);
  EXPECT_TRUE(std::isfinite(log_target_eps(net, model, x, Vec::Constant(1, 0.2))));
}

TEST(LogTarget, DegenerateProbitIsFlatOverSeparatingRegion) {
  Probit model;
  const auto data = Probit::make_data({0, 0, 0, 1, 1, 1}, {0.3, 0.5, 0.8, 1.3, 2.0, 3.5});
  ASSERT_TRUE(Probit::is_degenerate(data));
  // theta1 near 1 (between the groups), theta2 tiny
  auto net = PriorNetwork::single_layer(2, {{Activation::Exp, 2}});
  net.output_weight_mut() << 0.01, 0.0, 0.0, 0.3;
  net.output_bias_mut() << 0.0, std::log(1e-3);
  Vec a(2), b(2);
  a << 0.5, -1.0;
  b << -0.7, 1.2;
  const double da = log_target_eps(net, model, data, a) + 0.5 * a.squaredNorm();
  const double db = log_target_eps(net, model, data, b) + 0.5 * b.squaredNorm();
  EXPECT_NEAR(da, 0.0, 1e-12);
  EXPECT_NEAR(db, 0.0, 1e-12);
}

TEST(MhRun, LogNormalPriorPosteriorMeanByQuadrature) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(1, {{Activation::Exp, 1}});
  net.output_weight_mut()(0, 0) = 1.0;
  const auto x = model.make_data({0.8, -1.5, 0.3, 2.1, -0.4});
  auto post = [&](double e) { return std::exp(-0.5 * e * e + model.log_likelihood(x, model.point(std::vector<double>{std::exp(e)}))); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double z = GK::integrate(post, -15.0, 15.0, 10, 1e-13);
  const double m = GK::integrate([&](double e) { return e * post(e); }, -15.0, 15.0, 10, 1e-13) / z;
  const auto res = mh_run(net, model, x, small_config(), 3);
  const auto chain = column(res.chain.states, 0);
  double mean = 0;
  for (double v : chain) mean += v;
  mean /= chain.size();
  EXPECT_LE(std::abs(mean - m), 3 * batch_means_se(chain));
  EXPECT_GE(res.diagnostics.accept_kept, 0.25);
  EXPECT_LE(res.diagnostics.accept_kept, 0.55);
}

// MH on theta under the closed-form log-normal prior and MH on eps pushed
// through g target the same posterior.
TEST(MhRun, PushforwardMatchesDirectThetaChain) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(2, {{Activation::Exp, 1}});
  net.output_weight_mut() << 0.6, 0.8;
  net.output_bias_mut() << 0.2;
  const auto x = sample_data(model, std::vector<double>{1.0}, 10, 4);
  const auto eps_run = mh_run(net, model, x, small_config(), 8);
  auto log_prior = [&](const Vec& th) {
    const auto d = net.analytic_marginal(0, th[0]);
    return d ? std::log(*d) : kNegInf;
  };
  const Box box{Vec::Constant(1, -12.0), Vec::Constant(1, 12.0)};
  const auto theta_run = mh_theta_reference(log_prior, model, x, box, small_config(), 9);
  const RowMat a = thin(eps_run.theta, 5), b = thin(theta_run.theta, 5);
  ASSERT_EQ(a.rows(), 10000);
  const double stat = mmd2_unbiased(a, b);
  const double scale = mmd_null_scale(a, b, 20, 1);
  EXPECT_LE(std::abs(stat), 3 * scale) << "mmd2 " << stat << " null scale " << scale;
}

TEST(MhRun, AcceptanceOnEachModel) {
  {
    Multinomial model(10, 4);
    auto net = PriorNetwork::single_layer(10, {{Activation::Softmax, 4}});
    net.initialize(2, 0.5);
    const auto x = sample_data(model, std::vector<double>{0.1, 0.2, 0.3, 0.4}, 10, 2);
    auto cfg = small_config(20000, 10000);
    cfg.covariance = structured_covariance(net);
    const auto r = mh_run(net, model, x, cfg, 1);
    EXPECT_GE(r.diagnostics.accept_kept, 0.25);
    EXPECT_LE(r.diagnostics.accept_kept, 0.55);
    for (Eigen::Index i = 0; i < r.theta.rows(); ++i) ASSERT_NEAR(r.theta.row(i).sum(), 1.0, 1e-12);
  }
  {
    Probit model;
    auto net = PriorNetwork::single_layer(4, {{Activation::Exp, 1}, {Activation::Softplus, 1}});
    net.initialize(3, 0.5);
    const auto x = Probit::make_data({0, 1, 0, 1, 1}, {0.4, 0.9, 1.7, 2.2, 3.0});
    const auto r = mh_run(net, model, x, small_config(20000, 10000), 2);
    EXPECT_GE(r.diagnostics.accept_kept, 0.25);
    EXPECT_LE(r.diagnostics.accept_kept, 0.55);
  }
}

TEST(MhRun, DeterministicPerSeed) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(2, {{Activation::Softplus, 1}});
  net.initialize(5, 0.5);
  const auto x = model.make_data({0.5, 1.5, -0.7});
  const auto a = mh_run(net, model, x, small_config(2000, 1000), 6);
  const auto b = mh_run(net, model, x, small_config(2000, 1000), 6);
  EXPECT_TRUE((a.theta.array() == b.theta.array()).all());
  EXPECT_EQ(a.chain.accepted, b.chain.accepted);
  EXPECT_EQ(a.diagnostics.autocorr.size(), 1u);
}

TEST(StructuredProposal, ShrinksTheSoftmaxDirections) {
  auto net = PriorNetwork::single_layer(6, {{Activation::Softmax, 4}});
  net.initialize(4, 0.5);
  const Mat S = structured_covariance(net, 0.1);
  EXPECT_TRUE(S.isApprox(S.transpose(), 1e-14));
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  const Vec ev = es.eigenvalues();
  // the softmax Jacobian has rank q - 1 = 3
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(ev[i], 0.01, 1e-10);
  for (Eigen::Index i = 3; i < 6; ++i) EXPECT_NEAR(ev[i], 1.0, 1e-10);
}
