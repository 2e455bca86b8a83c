#include "oracles.hpp"
#include "toy_gradient.hpp"
#include "varp/optimizer.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace varp;

namespace {

double integrate_half_line(const std::function<double(double)>& f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, std::numeric_limits<double>::infinity(),
                                                                        15, 1e-13);
}

PriorNetwork lognormal_net(double b, std::initializer_list<double> w) {
  auto net = PriorNetwork::single_layer(w.size(), {{Activation::Exp, 1}});
  Eigen::Index i = 0;
  for (double x : w) net.output_weight_mut()(0, i++) = x;
  net.output_bias_mut()[0] = b;
  return net;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  AdamState st(3, {});
  Vec lam = Vec::LinSpaced(3, -1, 1), before = lam;
  adam_step(st, Vec::Zero(3), lam);
  EXPECT_TRUE((lam.array() == before.array()).all());
  EXPECT_TRUE((st.v.array() >= 0).all());
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  AdamState st(3, {0.01, 0.9, 0.999, 1e-8});
  Vec g(3), lam = Vec::Zero(3);
  g << 2.5, -0.003, 40.0;
  adam_step(st, g, lam);
  EXPECT_NEAR(lam[0], 0.01, 1e-9);
  EXPECT_NEAR(lam[1], -0.01, 1e-7);
  EXPECT_NEAR(lam[2], 0.01, 1e-9);
}

TEST(Adam, TwoStepsByHand) {
  AdamState st(1, {0.1, 0.9, 0.999, 1e-8});
  Vec lam = Vec::Constant(1, 0.5);
  const Vec g = Vec::Constant(1, 1.0);
  adam_step(st, g, lam);
  adam_step(st, g, lam);
  // m_hat = v_hat = 1 at both steps
  EXPECT_NEAR(lam[0], 0.7, 1e-8);
  EXPECT_LT(lam[0], 0.7);
  EXPECT_EQ(st.t, 2u);
}

TEST(Adam, NonFiniteGradientIsRejectedWithEpoch) {
  AdamState st(2, {});
  Vec lam = Vec::Ones(2);
  Vec g(2);
  g << 1.0, std::numeric_limits<double>::infinity();
  try {
    adam_step(st, g, lam, 17);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.epoch(), 17u);
  }
  EXPECT_EQ(st.t, 0u);
  EXPECT_TRUE((lam.array() == 1.0).all());
  EXPECT_THROW(adam_step(st, Vec::Zero(3), lam), std::invalid_argument);
}

TEST(ConstraintFunctions, ValuesAndDerivatives) {
  const auto rat = ConstraintFunction::rational(-1, 1);
  EXPECT_DOUBLE_EQ(rat.value(1.0), 0.5);
  EXPECT_NEAR(rat.value(2.0), 2.0 / 5.0, 1e-15);
  const auto mom = ConstraintFunction::moment(0.125);
  const auto tab = ConstraintFunction::tabulated({0.0, 1.0, 3.0}, {1.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(tab.value(0.5), 1.5);
  EXPECT_DOUBLE_EQ(tab.value(2.0), 3.0);
  EXPECT_DOUBLE_EQ(tab.value(-1.0), 1.0);
  EXPECT_DOUBLE_EQ(tab.value(9.0), 4.0);
  EXPECT_DOUBLE_EQ(tab.derivative(9.0), 0.0);
  for (const auto* f : {&rat, &mom, &tab})
    for (double x : {0.3, 0.7, 1.9, 2.6}) {
      const double h = 1e-6;
      EXPECT_NEAR(f->derivative(x), (f->value(x + h) - f->value(x - h)) / (2 * h), 1e-7);
    }
  EXPECT_THROW(ConstraintFunction::tabulated({0.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ConstraintFunction::tabulated({1.0, 0.0}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(ConstraintFunction::tabulated({0.0, 1.0}, {1.0, 0.0}), std::invalid_argument);
}

TEST(EstimateConstraint, DiracNetIsExact) {
  auto net = lognormal_net(std::log(1.7), {0.0, 0.0});
  const ConstraintSpec spec{{ConstraintFunction::moment(1.0), 1.2}};
  const auto c = estimate_constraint(net, spec, 1000, 3);
  // summing 1000 equal terms rounds at about n ulp
  EXPECT_NEAR(c.value[0], 0.5, 1e-12);
  EXPECT_NEAR(c.se[0], 0.0, 1e-9);
  EXPECT_THROW(estimate_constraint(net, spec, 99, 3), std::invalid_argument);
}

TEST(EstimateConstraint, LogNormalMean) {
  auto net = lognormal_net(0.2, {0.3, 0.4});
  const ConstraintSpec spec{{ConstraintFunction::moment(1.0), 0.0}};
  const auto c = estimate_constraint(net, spec, 100000, 5);
  EXPECT_LE(std::abs(c.mean[0] - std::exp(0.2 + 0.25 / 2)), 3 * c.se[0]);
}

TEST(EstimateConstraint, RationalMatchesLargeSampleOracle) {
  auto net = lognormal_net(-0.1, {0.8});
  const auto a = ConstraintFunction::rational(-1, 1);
  const auto c = estimate_constraint(net, {{a, 0.0}}, 100000, 6);
  // 10^7 independent log-normal draws
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> z;
  const std::size_t n = 10000000;
  double s = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = a.value(std::exp(-0.1 + 0.8 * z(rng)));
    s += v;
    sq += v * v;
  }
  const double m = s / n, se = std::sqrt((sq / n - m * m) / (n - 1));
  EXPECT_LE(std::abs(c.mean[0] - m), 3 * std::hypot(c.se[0], se));
}

TEST(Multipliers, ZeroConstraintHalvesPenalty) {
  LagrangianState lag(1, 4.0);
  lag.eta[0] = 0.7;
  update_multipliers(lag, Vec::Zero(1));
  EXPECT_DOUBLE_EQ(lag.eta[0], 0.7);
  EXPECT_DOUBLE_EQ(lag.eta_tilde[0], 2.0);
}

TEST(Multipliers, LargeConstraintDoublesPenaltyUpToCap) {
  LagrangianState lag(2, 3.0);
  Vec C(2);
  C << 0.01, -0.001;
  update_multipliers(lag, C);
  EXPECT_DOUBLE_EQ(lag.eta_tilde[0], 6.0);
  EXPECT_DOUBLE_EQ(lag.eta_tilde[1], 6.0);
  lag.eta_tilde.setConstant(9000.0);
  update_multipliers(lag, C);
  EXPECT_DOUBLE_EQ(lag.eta_tilde[0], 1e4);
}

TEST(Multipliers, UpdateFormula) {
  LagrangianState lag(1, 10.0);
  lag.eta[0] = 1.0;
  update_multipliers(lag, Vec::Constant(1, 0.1));
  EXPECT_NEAR(lag.eta[0], 0.0, 1e-15);
  EXPECT_THROW(update_multipliers(lag, Vec::Zero(2)), std::invalid_argument);
}

TEST(Multipliers, PenaltyStaysPositiveAndCapped) {
  LagrangianState lag(3, 1.0);
  Rng rng = make_rng(4);
  for (int i = 0; i < 2000; ++i) {
    Vec C(3);
    for (int k = 0; k < 3; ++k) C[k] = (uniform01(rng) < 0.5 ? 0.0 : 0.1) * standard_normal(rng);
    update_multipliers(lag, C);
    EXPECT_TRUE((lag.eta_tilde.array() > 0).all());
    EXPECT_TRUE((lag.eta_tilde.array() <= lag.eta_tilde_max).all());
  }
}

TEST(LagrangianGradient, ReducesToObjectiveGradient) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  const auto cfg = oracle::toy_estimator(Objective::LowerBound);
  const auto d = DivergenceSpec::alpha_div(0.5);
  const auto plain = objective_gradient(net, model, d, cfg, 8);
  LagrangianState lag(1, 1.0);
  EXPECT_TRUE((lagrangian_gradient(net, model, d, cfg, {}, lag, 8).grad.array() == plain.grad.array()).all());
  lag.eta.setZero();
  lag.eta_tilde.setZero();
  const ConstraintSpec spec{{ConstraintFunction::moment(2.0), 0.3}};
  EXPECT_TRUE((lagrangian_gradient(net, model, d, cfg, spec, lag, 8).grad.array() == plain.grad.array()).all());
}

// The penalty part is the gradient of eta E[a] - (eta_tilde / 2) (E[a] - b)^2
// with E taken over the draws the objective estimate used.
TEST(LagrangianGradient, PenaltyPartMatchesFiniteDifferences) {
  const auto net = oracle::toy_net();
  BernoulliToy model;
  const auto cfg = oracle::toy_estimator(Objective::LowerBound);
  const auto d = DivergenceSpec::kl();
  const ConstraintSpec spec{{ConstraintFunction::moment(2.0), 0.1}};
  LagrangianState lag(1, 3.0);
  lag.eta[0] = 0.4;
  const auto plain = objective_gradient(net, model, d, cfg, 9);
  const auto full = lagrangian_gradient(net, model, d, cfg, spec, lag, 9);
  std::vector<Vec> eps;
  for (Eigen::Index i = 0; i < plain.outer_latents.rows(); ++i) eps.emplace_back(plain.outer_latents.row(i).transpose());
  for (Eigen::Index i = 0; i < plain.marginal_latents.rows(); ++i) eps.emplace_back(plain.marginal_latents.row(i).transpose());
  auto penalty = [&](const Vec& lam) {
    PriorNetwork n2 = net;
    n2.set_params(lam);
    double m = 0;
    for (const auto& e : eps) m += std::pow(n2.forward(e)[0], 2);
    m /= eps.size();
    Vec out(1);
    out[0] = lag.eta[0] * m - 0.5 * lag.eta_tilde[0] * (m - 0.1) * (m - 0.1);
    return out;
  };
  const Mat fd = oracle::fd_jacobian(penalty, net.params());
  const Vec part = full.grad - plain.grad;
  for (Eigen::Index l = 0; l < part.size(); ++l) EXPECT_NEAR(part[l], fd(0, l), 1e-8 * std::max(1.0, std::abs(fd(0, l))));
}

TEST(Train, ZeroLearningRateKeepsDiracToyFixed) {
  const auto net = oracle::toy_net(0.0, 0.4);
  BernoulliToy model;
  auto cfg = oracle::toy_estimator(Objective::LowerBound);
  cfg.n_outer = 20;
  TrainConfig tc;
  tc.epochs = 5;
  tc.monitor_every = 1;
  tc.adam.lr = 0.0;
  const auto res = train(net, model, DivergenceSpec::alpha_div(0.5), cfg, {}, tc, 3);
  EXPECT_TRUE((res.net.params().array() == net.params().array()).all());
  ASSERT_EQ(res.mi_trace.size(), 6u);
  for (const auto& p : res.mi_trace) EXPECT_EQ(p.mean, 0.0);
  EXPECT_FALSE(res.lagrangian.has_value());
  EXPECT_TRUE(res.constraint_trace.empty());
}

TEST(Train, MultinomialTraceStaysBoundedAndRises) {
  Multinomial model(10, 4);
  auto net = PriorNetwork::single_layer(50, {{Activation::Softmax, 4}});
  net.initialize(1);
  EstimatorConfig cfg;
  cfg.N = 10;
  cfg.T = 50;
  cfg.U = 100;
  cfg.n_theta = 20;
  cfg.n_outer = 200;
  TrainConfig tc;
  tc.epochs = 200;
  tc.monitor_every = 10;
  tc.adam.lr = 0.0025;
  const auto res = train(net, model, DivergenceSpec::alpha_div(0.5), cfg, {}, tc, 7);
  ASSERT_GE(res.mi_trace.size(), 8u);
  for (const auto& p : res.mi_trace) {
    EXPECT_GE(p.mean, -3 * p.std_error);
    EXPECT_LE(p.mean, 4 + 3 * p.std_error);
  }
  const std::size_t k = res.mi_trace.size() / 4;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < k; ++i) {
    first += res.mi_trace[i].mean;
    last += res.mi_trace[res.mi_trace.size() - 1 - i].mean;
  }
  EXPECT_GT(last, first);
}

TEST(Train, DeterministicForFixedSeed) {
  GaussVar model;
  auto net = PriorNetwork::single_layer(3, {{Activation::Softplus, 1}});
  net.initialize(2);
  EstimatorConfig cfg;
  cfg.U = 20;
  cfg.n_theta = 10;
  cfg.n_outer = 20;
  TrainConfig tc;
  tc.epochs = 30;
  tc.adam.lr = 0.01;
  tc.constraint_samples = 500;
  const ConstraintSpec spec{{ConstraintFunction::rational(-1, 1), 0.39}};
  LagrangianState lag(1);
  lag.period = 10;
  const auto a = train(net, model, DivergenceSpec::alpha_div(0.5), cfg, spec, tc, 5, lag);
  cfg.threads = 2;
  const auto b = train(net, model, DivergenceSpec::alpha_div(0.5), cfg, spec, tc, 5, lag);
  EXPECT_TRUE((a.net.params().array() == b.net.params().array()).all());
  ASSERT_EQ(a.mi_trace.size(), b.mi_trace.size());
  for (std::size_t i = 0; i < a.mi_trace.size(); ++i) EXPECT_EQ(a.mi_trace[i].mean, b.mi_trace[i].mean);
  ASSERT_EQ(a.constraint_trace.size(), 4u);
  EXPECT_EQ(a.constraint_trace.back().epoch, 30u);
  EXPECT_EQ(a.lagrangian->eta[0], b.lagrangian->eta[0]);
}

TEST(ConstrainedTarget, GaussVarConstantsByQuadrature) {
  const auto a = ConstraintFunction::rational(-1, 1);
  // Jeffreys density 1 / theta for the variance
  const double K = integrate_half_line([&](double x) { return x > 0 ? std::pow(a.value(x), 2) / x : 0.0; });
  const double c = integrate_half_line([&](double x) { return x > 0 ? std::pow(a.value(x), 3) / x : 0.0; });
  EXPECT_NEAR(K, 0.5, 1e-10);
  EXPECT_NEAR(c, kPi / 16, 1e-10);
  EXPECT_NEAR(c / K, 0.392699, 1e-6);
  // integrability bound (1 / delta) (1 / tau - 1 / beta) = 1 at delta = 2
  EXPECT_LE(K, 1.0);
}

TEST(ConstrainedTarget, ProbitMomentIsAdmissible) {
  const double alpha = 0.5, kappa = 0.125;
  EXPECT_GT(kappa, 0.0);
  EXPECT_LT(kappa, 2.0 / (1.0 + 1.0 / alpha));
  EXPECT_NEAR(2.0 / (1.0 + 1.0 / alpha), 2.0 / 3.0, 1e-15);
}

TEST(Integrability, HeavyTailIsDetected) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> light, heavy;
  for (int i = 0; i < 100000; ++i) {
    light.push_back(u(rng));
    heavy.push_back(std::pow(u(rng), -2.0));  // Pareto with infinite mean
  }
  EXPECT_TRUE(looks_integrable(moment_estimate(light)));
  EXPECT_FALSE(looks_integrable(moment_estimate(heavy)));
}

TEST(Pipeline, RejectsNonIntegrableConstraint) {
  GaussVar model;
  auto net = lognormal_net(0.0, {6.0});
  EstimatorConfig cfg;
  cfg.U = 5;
  cfg.n_theta = 5;
  cfg.n_outer = 10;
  PipelineConfig pc;
  pc.stage1.epochs = 0;
  pc.moment_samples = 20000;
  EXPECT_THROW(constrained_pipeline(net, net, model, DivergenceSpec::alpha_div(0.5), cfg, ConstraintFunction::moment(3.0),
                                    pc, 1),
               std::runtime_error);
}

TEST(Pipeline, ConfigurationErrors) {
  GaussVar model;
  auto net = lognormal_net(0.0, {0.5});
  EstimatorConfig cfg;
  PipelineConfig pc;
  pc.skip_stage1 = true;
  EXPECT_THROW(constrained_pipeline(net, net, model, DivergenceSpec::alpha_div(0.5), cfg,
                                    ConstraintFunction::rational(-1, 1), pc, 1),
               ConfigError);
  pc.skip_stage1 = false;
  EXPECT_THROW(constrained_pipeline(net, net, model, DivergenceSpec::kl(), cfg, ConstraintFunction::rational(-1, 1), pc, 1),
               ConfigError);
}

TEST(Pipeline, ExactTargetWithShortStages) {
  GaussVar model;
  auto s1 = PriorNetwork::single_layer(3, {{Activation::Softplus, 1}});
  s1.initialize(1);
  auto s3 = PriorNetwork::single_layer(3, {{Activation::Exp, 1}});
  s3.initialize(2);
  EstimatorConfig cfg;
  cfg.U = 10;
  cfg.n_theta = 5;
  cfg.n_outer = 10;
  PipelineConfig pc;
  pc.stage1.epochs = 3;
  pc.stage3.epochs = 4;
  pc.stage3.constraint_samples = 200;
  pc.moment_samples = 2000;
  pc.exact_target = kPi / 8;
  LagrangianState lag(1);
  lag.period = 2;
  pc.lagrangian = lag;
  const auto res = constrained_pipeline(s1, s3, model, DivergenceSpec::alpha_div(0.5), cfg,
                                        ConstraintFunction::rational(-1, 1), pc, 4);
  ASSERT_TRUE(res.unconstrained.has_value());
  EXPECT_FALSE(res.target_from_estimate);
  EXPECT_DOUBLE_EQ(res.target, kPi / 8);
  EXPECT_GT(res.K_hat.value, 0.0);
  EXPECT_EQ(res.constrained.net.activation_of(0), Activation::Exp);
  EXPECT_EQ(res.constrained.constraint_trace.size(), 3u);
}
