#pragma once

// Replicated gradient estimates on the Bernoulli toy against central
// differences of the enumerated-and-quadratured objective.

#include "oracles.hpp"
#include "varp/objectives.hpp"

#include <array>
#include <string>

namespace oracle {

struct ToyGradientCheck {
  std::array<double, 2> mean{}, se{}, exact{};
  double worst_z = 0.0;  // max |mean - exact| / se over coordinates
  std::size_t clamped = 0;
  bool pass(double z = 3.0) const { return worst_z <= z; }
};

inline varp::PriorNetwork toy_net(double w = 0.8, double b = -0.3) {
  auto net = varp::PriorNetwork::single_layer(1, {{varp::Activation::Sigmoid, 1}});
  net.output_weight_mut()(0, 0) = w;
  net.output_bias_mut()[0] = b;
  return net;
}

inline varp::EstimatorConfig toy_estimator(varp::Objective obj) {
  varp::EstimatorConfig cfg;
  cfg.N = 3;
  cfg.T = 400;
  cfg.U = 20;
  cfg.n_theta = 20;
  cfg.objective = obj;
  return cfg;
}

inline ToyGradientCheck check_toy_gradient(const varp::DivergenceSpec& div, varp::Objective obj,
                                           std::size_t replicates = 500, std::uint64_t seed = 2024) {
  const double w = 0.8, b = -0.3;
  const auto net = toy_net(w, b);
  const varp::BernoulliToy model;
  const auto cfg = toy_estimator(obj);
  ToyGradientCheck out;
  std::array<double, 2> sum{}, sq{};
  for (std::size_t r = 0; r < replicates; ++r) {
    const auto g = varp::objective_gradient(net, model, div, cfg, varp::stream_key(seed, r));
    out.clamped += g.clamped;
    for (int k = 0; k < 2; ++k) {
      sum[k] += g.grad[k];
      sq[k] += g.grad[k] * g.grad[k];
    }
  }
  const double n = static_cast<double>(replicates);
  out.exact = BernoulliToyExact{}.gradient(w, b, div, obj == varp::Objective::LowerBound);
  for (int k = 0; k < 2; ++k) {
    out.mean[k] = sum[k] / n;
    out.se[k] = std::sqrt(std::max(0.0, sq[k] / n - out.mean[k] * out.mean[k]) / (n - 1));
    out.worst_z = std::max(out.worst_z, std::abs(out.mean[k] - out.exact[k]) / out.se[k]);
  }
  return out;
}

}  // namespace oracle
