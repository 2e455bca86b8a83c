#include "oracles.hpp"
#include "toy_gradient.hpp"
#include "varp/objectives.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace varp;

namespace {

PriorNetwork dirac_multinomial_net() {
  // W = 0, b = 0: every draw is the uniform point of the simplex
  return PriorNetwork::single_layer(3, {{Activation::Softmax, 4}}, 0.0);
}

Multinomial::Data one_count_row(std::initializer_list<double> xs) {
  RowMat c(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index j = 0;
  for (double x : xs) c(0, j++) = x;
  return Multinomial::make_data(c);
}

BernoulliToy::Data seq(int bits, int N) {
  std::vector<int> x;
  for (int i = 0; i < N; ++i) x.push_back((bits >> i) & 1);
  return BernoulliToy::make_data(x);
}

struct MeanSe {
  double mean = 0, se = 0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  for (double x : v) r.mean += x;
  r.mean /= v.size();
  double sq = 0;
  for (double x : v) sq += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(sq / (v.size() - 1) / v.size());
  return r;
}

}  // namespace

TEST(Marginal, DiracNetGivesLikelihoodForAnyT) {
  Multinomial model(10, 4);
  const auto x = one_count_row({4, 3, 2, 1});
  const Vec th = Vec::Constant(4, 0.25);
  const double exact = log_likelihood(model, x, as_span(th));
  for (std::size_t T : {1u, 2u, 50u}) EXPECT_NEAR(log_marginal(dirac_multinomial_net(), model, x, T, 9), exact, 1e-12);
}

TEST(Marginal, SingleDrawIsThatDrawsLikelihood) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(2, {{Activation::Exp, 1}});
  net.initialize(4, 0.5);
  const auto x = model.make_data({0.3, -1.2, 0.8});
  const auto batch = detail::marginal_batch(net, model, 1, 31, 0);
  const Vec th = net.forward(batch[0].eps);
  EXPECT_DOUBLE_EQ(log_marginal(net, model, x, 1, 31), log_likelihood(model, x, as_span(th)));
  EXPECT_THROW(log_marginal(net, model, x, 0, 31), std::invalid_argument);
}

TEST(Marginal, BernoulliToyMatchesQuadrature) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  const oracle::BernoulliToyExact exact;
  for (int bits : {0, 5, 7}) {
    const auto x = seq(bits, 3);
    std::vector<double> reps;
    for (int r = 0; r < 200; ++r) reps.push_back(estimate_marginal(net, model, x, 50, stream_key(77, r)));
    const auto ms = mean_se(reps);
    EXPECT_LE(std::abs(ms.mean - exact.marginal(0.8, -0.3, x.ones)), 3 * ms.se) << "outcome " << bits;
  }
}

TEST(Marginal, SumsToOneOverTheToySampleSpace) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  std::vector<double> totals;
  for (int r = 0; r < 50; ++r) {
    double s = 0;
    for (int bits = 0; bits < 8; ++bits) s += estimate_marginal(net, model, seq(bits, 3), 30, stream_key(5, r));
    totals.push_back(s);
  }
  // every draw's likelihoods sum to one over the sample space
  for (double t : totals) EXPECT_NEAR(t, 1.0, 1e-12);
}

TEST(MleProxy, DiracNetGivesLikelihood) {
  Multinomial model(10, 4);
  const auto x = one_count_row({4, 3, 2, 1});
  EXPECT_NEAR(log_mle_proxy(dirac_multinomial_net(), model, x, 20, 3),
              log_likelihood(model, x, as_span(Vec::Constant(4, 0.25))), 1e-12);
}

TEST(MleProxy, BoundedByMarginalAndExactMle) {
  Multinomial model(10, 4);
  auto net = PriorNetwork::single_layer(3, {{Activation::Softmax, 4}});
  net.initialize(8, 1.0);
  Rng rng = make_rng(1);
  for (int r = 0; r < 50; ++r) {
    const auto x = model.simulate(model.point(as_span(Vec::Constant(4, 0.25))), 1 + r % 3, rng);
    const double proxy = log_mle_proxy(net, model, x, 100, r);
    EXPECT_GE(proxy, log_marginal(net, model, x, 100, r));
    // boundary MLEs are guarded into the interior, like the softmax output
    EXPECT_LE(proxy, *max_log_likelihood(model, x) + 1e-12);
  }
}

TEST(MleProxy, ConvergesToExactMleWithManyDraws) {
  Multinomial model(10, 4);
  auto net = PriorNetwork::single_layer(3, {{Activation::Softmax, 4}});
  net.output_weight_mut() = RowMat::Identity(4, 3);
  const auto x = one_count_row({3, 3, 2, 2});
  const double exact = *max_log_likelihood(model, x, 0.0);
  const double proxy = log_mle_proxy(net, model, x, 10000, 12);
  EXPECT_LE(std::abs(std::expm1(proxy - exact)), 0.01);
}

TEST(EstimateMi, DiracNetIsExactlyZero) {
  Multinomial model(10, 4);
  EstimatorConfig cfg;
  cfg.n_outer = 50;
  for (const auto& d : {DivergenceSpec::kl(), DivergenceSpec::alpha_div(0.5), DivergenceSpec::alpha_div(0.3, false)}) {
    const auto est = estimate_mi(dirac_multinomial_net(), model, d, cfg, 4);
    EXPECT_EQ(est.value, 0.0) << d.name();
    EXPECT_EQ(est.std_error, 0.0);
  }
}

TEST(EstimateMi, HalfAlphaStaysInsideBounds) {
  EstimatorConfig cfg;
  cfg.n_outer = 300;
  const auto d = DivergenceSpec::alpha_div(0.5);
  for (double scale : {0.05, 1.0, 5.0}) {
    Multinomial model(10, 4);
    auto net = PriorNetwork::single_layer(5, {{Activation::Softmax, 4}});
    net.initialize(3, scale);
    const auto est = estimate_mi(net, model, d, cfg, 6);
    EXPECT_GE(est.value, -3 * est.std_error);
    EXPECT_LE(est.value, 4 + 3 * est.std_error);
  }
}

TEST(EstimateMi, BernoulliToyMatchesEnumeration) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  EstimatorConfig cfg;
  cfg.N = 3;
  cfg.T = 1000;
  cfg.n_outer = 20000;
  const oracle::BernoulliToyExact exact;
  for (const auto& d : {DivergenceSpec::kl(), DivergenceSpec::alpha_div(0.25), DivergenceSpec::alpha_div(0.75, false)}) {
    const auto est = estimate_mi(net, model, d, cfg, 10);
    EXPECT_LE(std::abs(est.value - exact.objective(0.8, -0.3, d, false)), 3 * est.std_error) << d.name();
    EXPECT_EQ(est.clamped, 0u);
  }
}

TEST(EstimateLowerBound, BernoulliToyMatchesEnumeration) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  EstimatorConfig cfg;
  cfg.N = 3;
  cfg.n_outer = 20000;
  const oracle::BernoulliToyExact exact;
  for (const auto& d : {DivergenceSpec::kl(), DivergenceSpec::alpha_div(0.5)}) {
    const auto est = estimate_lower_bound(net, model, d, cfg, 10);
    EXPECT_LE(std::abs(est.value - exact.objective(0.8, -0.3, d, true)), 3 * est.std_error) << d.name();
  }
}

TEST(EstimateLowerBound, NeverAboveMutualInformation) {
  Multinomial model(10, 4);
  auto net = PriorNetwork::single_layer(4, {{Activation::Softmax, 4}});
  net.initialize(2, 0.8);
  EstimatorConfig cfg;
  cfg.n_outer = 400;
  for (const auto& d : {DivergenceSpec::kl(), DivergenceSpec::alpha_div(0.5)}) {
    for (auto src : {MleSource::Exact, MleSource::Proxy}) {
      cfg.mle = src;
      const auto mi = estimate_mi(net, model, d, cfg, 21);
      const auto lb = estimate_lower_bound(net, model, d, cfg, 21);
      EXPECT_LE(lb.value, mi.value + 3 * std::hypot(mi.std_error, lb.std_error));
    }
  }
}

TEST(GradFullMi, SymmetricDiracNetHasEqualBiasGradients) {
  Multinomial model(10, 4);
  const auto net = dirac_multinomial_net();
  EstimatorConfig cfg;
  cfg.U = 20;
  cfg.n_theta = 10;
  cfg.T = 20;
  std::vector<std::vector<double>> b(4);
  for (int r = 0; r < 100; ++r) {
    const auto g = grad_full_mi(net, model, DivergenceSpec::alpha_div(0.5), cfg, stream_key(3, r));
    for (int k = 0; k < 4; ++k) b[k].push_back(g.grad[12 + k]);
  }
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      std::vector<double> diff;
      for (std::size_t r = 0; r < b[i].size(); ++r) diff.push_back(b[i][r] - b[j][r]);
      const auto ms = mean_se(diff);
      EXPECT_LE(std::abs(ms.mean), 3 * ms.se + 1e-12) << i << " vs " << j;
    }
}

TEST(GradLowerBound, DiracNetHasZeroMeanGradient) {
  Multinomial model(10, 4);
  const auto net = dirac_multinomial_net();
  EstimatorConfig cfg;
  cfg.U = 10;
  cfg.n_theta = 5;
  cfg.T = 10;
  cfg.mle = MleSource::Proxy;
  const auto L = static_cast<Eigen::Index>(net.num_params());
  std::vector<std::vector<double>> per(static_cast<std::size_t>(L));
  for (int r = 0; r < 200; ++r) {
    const auto g = grad_lower_bound(net, model, DivergenceSpec::alpha_div(0.5), cfg, stream_key(8, r));
    for (Eigen::Index l = 0; l < L; ++l) per[static_cast<std::size_t>(l)].push_back(g.grad[l]);
  }
  for (const auto& v : per) {
    const auto ms = mean_se(v);
    EXPECT_LE(std::abs(ms.mean), 3 * ms.se + 1e-12);
  }
}

TEST(GradLowerBound, RequiresDecreasingGenerator) {
  BernoulliToy model;
  EXPECT_THROW(grad_lower_bound(oracle::toy_net(), model, DivergenceSpec::alpha_div(0.5, false),
                                oracle::toy_estimator(Objective::LowerBound), 1),
               std::invalid_argument);
}

// Lighter variant of the acceptance oracle check: 200 replicates.
TEST(GradientOracle, FullMiAndLowerBoundAreUnbiasedOnTheToy) {
  for (const auto& d : {DivergenceSpec::kl(), DivergenceSpec::alpha_div(0.5)}) {
    for (auto obj : {Objective::FullMI, Objective::LowerBound}) {
      const auto r = oracle::check_toy_gradient(d, obj, 200, 99);
      EXPECT_TRUE(r.pass()) << d.name() << " z=" << r.worst_z;
      EXPECT_EQ(r.clamped, 0u);
    }
  }
}

TEST(Determinism, SameSeedIsBitIdenticalAcrossThreadCounts) {
  Multinomial model(10, 4);
  auto net = PriorNetwork::two_layer_prelu(3, 5, {{Activation::Softmax, 4}});
  net.initialize(12);
  EstimatorConfig cfg;
  cfg.U = 8;
  cfg.n_theta = 7;
  cfg.T = 12;
  cfg.n_outer = 30;
  const auto d = DivergenceSpec::alpha_div(0.5);
  for (auto obj : {Objective::FullMI, Objective::LowerBound}) {
    cfg.objective = obj;
    cfg.threads = 1;
    const auto a = objective_gradient(net, model, d, cfg, 44);
    const auto b = objective_gradient(net, model, d, cfg, 44);
    cfg.threads = 3;
    const auto c = objective_gradient(net, model, d, cfg, 44);
    EXPECT_TRUE((a.grad.array() == b.grad.array()).all());
    EXPECT_TRUE((a.grad.array() == c.grad.array()).all());
    EXPECT_TRUE(a.grad.allFinite());
    EXPECT_FALSE((a.grad.array() == objective_gradient(net, model, d, cfg, 45).grad.array()).all());
  }
  cfg.threads = 1;
  const auto m1 = estimate_mi(net, model, d, cfg, 5);
  cfg.threads = 4;
  const auto m2 = estimate_mi(net, model, d, cfg, 5);
  EXPECT_EQ(m1.value, m2.value);
  EXPECT_EQ(m1.std_error, m2.std_error);
}

TEST(EstimatorConfig, RejectsInvalidSizes) {
  EstimatorConfig cfg;
  cfg.T = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.U = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.N = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_outer = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
