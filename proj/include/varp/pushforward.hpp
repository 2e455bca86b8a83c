#pragma once

// Implicit priors theta = g(lambda, eps) with eps ~ N(0, I_p).

#include "varp/core.hpp"
#include "varp/special.hpp"

#include <json.hpp>

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace varp {

enum class Activation { Softmax, Exp, Softplus, Sigmoid, Identity };

enum class Architecture { SingleLayer, TwoLayerPReLU };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Softmax: return "softmax";
    case Activation::Exp: return "exp";
    case Activation::Softplus: return "softplus";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "softmax") return Activation::Softmax;
  if (s == "exp") return Activation::Exp;
  if (s == "softplus") return Activation::Softplus;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline std::string_view to_string(Architecture a) {
  return a == Architecture::SingleLayer ? "single_layer" : "two_layer_prelu";
}

inline Architecture architecture_from_string(std::string_view s) {
  if (s == "single_layer") return Architecture::SingleLayer;
  if (s == "two_layer_prelu") return Architecture::TwoLayerPReLU;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

// A contiguous run of outputs sharing one activation. Softmax acts on the
// whole block; the others act elementwise.
struct OutputBlock {
  Activation activation = Activation::Identity;
  std::size_t size = 1;
};

struct LatentSpec {
  std::size_t p = 1;
};

// count x p matrix of i.i.d. N(0, 1) entries.
inline Mat sample_latent(const LatentSpec& spec, std::size_t count, std::uint64_t seed) {
  if (spec.p == 0) throw std::invalid_argument("latent dimension must be >= 1");
  if (count == 0) throw std::invalid_argument("sample count must be >= 1");
  Rng rng = make_rng(seed, 0x1a7e);
  Mat out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(spec.p));
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = standard_normal(rng);
  return out;
}

class PriorNetwork {
 public:
  // Intermediate values of one forward pass, reused by the Jacobians.
  struct Trace {
    Vec hidden_pre;   // W1 eps + b1 (two-layer only)
    Vec hidden;       // PReLU(hidden_pre)
    Vec pre;          // output pre-activation
    Vec unguarded;    // activation output before the softmax guard
    Vec theta;
  };

  PriorNetwork() = default;

  static PriorNetwork single_layer(std::size_t p, std::vector<OutputBlock> blocks, double delta = 1e-6) {
    PriorNetwork net;
    net.arch_ = Architecture::SingleLayer;
    net.init_shape(p, 0, std::move(blocks), delta);
    return net;
  }

  static PriorNetwork two_layer_prelu(std::size_t p, std::size_t hidden, std::vector<OutputBlock> blocks,
                                      double delta = 1e-6, double zeta = 0.25) {
    if (hidden == 0) throw std::invalid_argument("hidden dimension must be >= 1");
    PriorNetwork net;
    net.arch_ = Architecture::TwoLayerPReLU;
    net.init_shape(p, hidden, std::move(blocks), delta);
    net.set_zeta(zeta);
    return net;
  }

  // Gaussian weights with standard deviation `weight_std`, zero biases.
  void initialize(std::uint64_t seed, double weight_std = 0.05) {
    Rng rng = make_rng(seed, 0x1417);
    const double zeta = arch_ == Architecture::TwoLayerPReLU ? zeta_value() : 0.0;
    params_.setZero();
    auto fill = [&](std::size_t off, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) params_[static_cast<Eigen::Index>(off + i)] = weight_std * standard_normal(rng);
    };
    if (arch_ == Architecture::SingleLayer) {
      fill(0, q_ * p_);
    } else {
      fill(0, h_ * p_);
      fill(off_w2(), q_ * h_);
      set_zeta(zeta);
    }
  }

  Architecture architecture() const { return arch_; }
  std::size_t latent_dim() const { return p_; }
  std::size_t output_dim() const { return q_; }
  std::size_t hidden_dim() const { return h_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  double delta() const { return delta_; }
  const std::vector<OutputBlock>& blocks() const { return blocks_; }

  const Vec& params() const { return params_; }
  void set_params(const Vec& lambda) {
    if (lambda.size() != params_.size()) throw std::invalid_argument("parameter vector has wrong length");
    params_ = lambda;
  }

  double zeta_value() const {
    return arch_ == Architecture::TwoLayerPReLU ? params_[params_.size() - 1] : 0.0;
  }
  void set_zeta(double zeta) {
    if (arch_ != Architecture::TwoLayerPReLU) return;
    if (!(zeta > 0.0)) throw std::invalid_argument("PReLU slope must be positive");
    params_[params_.size() - 1] = zeta;
  }
  // Keeps the PReLU slope strictly positive after an optimizer step.
  void project_constraints(double zeta_floor = 1e-6) {
    if (arch_ == Architecture::TwoLayerPReLU && params_[params_.size() - 1] < zeta_floor)
      params_[params_.size() - 1] = zeta_floor;
  }

  // Output-layer weights (q x p single layer, q x h two layer) and biases.
  Eigen::Map<const RowMat> output_weight() const {
    const std::size_t in = arch_ == Architecture::SingleLayer ? p_ : h_;
    return {params_.data() + off_w_out(), static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(in)};
  }
  Eigen::Map<const Vec> output_bias() const {
    return {params_.data() + off_b_out(), static_cast<Eigen::Index>(q_)};
  }
  Eigen::Map<const RowMat> hidden_weight() const {
    return {params_.data(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(p_)};
  }
  Eigen::Map<const Vec> hidden_bias() const {
    return {params_.data() + h_ * p_, static_cast<Eigen::Index>(h_)};
  }
  Eigen::Map<RowMat> output_weight_mut() {
    const std::size_t in = arch_ == Architecture::SingleLayer ? p_ : h_;
    return {params_.data() + off_w_out(), static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(in)};
  }
  Eigen::Map<Vec> output_bias_mut() { return {params_.data() + off_b_out(), static_cast<Eigen::Index>(q_)}; }
  Eigen::Map<RowMat> hidden_weight_mut() {
    return {params_.data(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(p_)};
  }
  Eigen::Map<Vec> hidden_bias_mut() { return {params_.data() + h_ * p_, static_cast<Eigen::Index>(h_)}; }

  Trace trace(std::span<const double> eps) const {
    check_latent(eps);
    Eigen::Map<const Vec> e(eps.data(), static_cast<Eigen::Index>(p_));
    Trace tr;
    if (arch_ == Architecture::SingleLayer) {
      tr.pre = output_weight() * e + output_bias();
    } else {
      tr.hidden_pre = hidden_weight() * e + hidden_bias();
      const double zeta = zeta_value();
      tr.hidden = tr.hidden_pre.unaryExpr([zeta](double x) { return x >= 0.0 ? x : zeta * x; });
      tr.pre = output_weight() * tr.hidden + output_bias();
    }
    apply_activations(tr);
    return tr;
  }

  Vec forward(std::span<const double> eps) const { return trace(eps).theta; }
  Vec forward(const Vec& eps) const { return forward(as_span(eps)); }

  // out += scale * J^T v, J = d theta / d lambda at eps.
  void accumulate_vjp(const Trace& tr, std::span<const double> eps, const Vec& v, double scale, Vec& out) const {
    const Vec g = scale * activation_vjp(tr, v);
    Eigen::Map<const Vec> e(eps.data(), static_cast<Eigen::Index>(p_));
    if (arch_ == Architecture::SingleLayer) {
      Eigen::Map<RowMat>(out.data(), static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(p_)).noalias() +=
          g * e.transpose();
      out.segment(static_cast<Eigen::Index>(off_b_out()), static_cast<Eigen::Index>(q_)) += g;
      return;
    }
    const auto hq = static_cast<Eigen::Index>(q_), hh = static_cast<Eigen::Index>(h_),
               hp = static_cast<Eigen::Index>(p_);
    Eigen::Map<RowMat>(out.data() + off_w2(), hq, hh).noalias() += g * tr.hidden.transpose();
    out.segment(static_cast<Eigen::Index>(off_b_out()), hq) += g;
    const Vec ga = output_weight().transpose() * g;
    const double zeta = zeta_value();
    Vec gh(hh);
    double gz = 0.0;
    for (Eigen::Index m = 0; m < hh; ++m) {
      const double x = tr.hidden_pre[m];
      gh[m] = ga[m] * (x >= 0.0 ? 1.0 : zeta);
      if (x < 0.0) gz += ga[m] * x;
    }
    Eigen::Map<RowMat>(out.data(), hh, hp).noalias() += gh * e.transpose();
    out.segment(static_cast<Eigen::Index>(h_ * p_), hh) += gh;
    out[out.size() - 1] += gz;
  }

  // q x L matrix of d theta_j / d lambda_l.
  Mat jacobian_params(std::span<const double> eps) const {
    const Trace tr = trace(eps);
    Mat jac = Mat::Zero(static_cast<Eigen::Index>(q_), params_.size());
    Vec row(params_.size());
    for (std::size_t j = 0; j < q_; ++j) {
      row.setZero();
      accumulate_vjp(tr, eps, Vec::Unit(static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(j)), 1.0, row);
      jac.row(static_cast<Eigen::Index>(j)) = row.transpose();
    }
    return jac;
  }
  Mat jacobian_params(const Vec& eps) const { return jacobian_params(as_span(eps)); }

  // q x p matrix of d theta / d eps.
  Mat jacobian_latent(std::span<const double> eps) const {
    const Trace tr = trace(eps);
    Mat jac(static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(p_));
    for (std::size_t j = 0; j < q_; ++j) {
      const Vec g = activation_vjp(tr, Vec::Unit(static_cast<Eigen::Index>(q_), static_cast<Eigen::Index>(j)));
      if (arch_ == Architecture::SingleLayer) {
        jac.row(static_cast<Eigen::Index>(j)) = (output_weight().transpose() * g).transpose();
      } else {
        Vec ga = output_weight().transpose() * g;
        const double zeta = zeta_value();
        for (Eigen::Index m = 0; m < ga.size(); ++m) ga[m] *= tr.hidden_pre[m] >= 0.0 ? 1.0 : zeta;
        jac.row(static_cast<Eigen::Index>(j)) = (hidden_weight().transpose() * ga).transpose();
      }
    }
    return jac;
  }

  // count x q matrix of pushforward draws.
  Mat sample_prior(std::size_t count, std::uint64_t seed) const {
    const Mat eps = sample_latent({p_}, count, seed);
    Mat out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(q_));
    Vec e(static_cast<Eigen::Index>(p_));
    for (Eigen::Index i = 0; i < eps.rows(); ++i) {
      e = eps.row(i).transpose();
      out.row(i) = forward(e).transpose();
    }
    return out;
  }

  // Closed-form marginal density of one output for single-layer Exp
  // (log-normal) and Softplus outputs; nullopt for every other case.
  std::optional<double> analytic_marginal(std::size_t component, double x) const {
    if (component >= q_) throw std::out_of_range("output component out of range");
    if (arch_ != Architecture::SingleLayer) return std::nullopt;
    const Activation act = activation_of(component);
    if (act != Activation::Exp && act != Activation::Softplus) return std::nullopt;
    if (!(x > 0.0)) throw DomainError("marginal density requires a positive argument");
    const auto j = static_cast<Eigen::Index>(component);
    const double s = output_weight().row(j).norm();
    const double b = output_bias()[j];
    if (s == 0.0) return std::nullopt;
    if (act == Activation::Exp) {
      const double z = (std::log(x) - b) / s;
      return special::normal_pdf(z) / (x * s);
    }
    const double z = (special::softplus_inverse(x) - b) / s;
    return special::normal_pdf(z) / (s * -std::expm1(-x));
  }

  Activation activation_of(std::size_t component) const {
    std::size_t start = 0;
    for (const auto& blk : blocks_) {
      if (component < start + blk.size) return blk.activation;
      start += blk.size;
    }
    throw std::out_of_range("output component out of range");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["architecture"] = std::string(to_string(arch_));
    j["p"] = p_;
    j["q"] = q_;
    if (arch_ == Architecture::TwoLayerPReLU) j["hidden_dim"] = h_;
    j["delta"] = delta_;
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : blocks_) blocks.push_back({{"activation", std::string(to_string(b.activation))}, {"size", b.size}});
    j["blocks"] = blocks;
    auto vec_of = [](auto&& m) {
      std::vector<double> out;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
      return out;
    };
    if (arch_ == Architecture::SingleLayer) {
      j["weights"] = {vec_of(output_weight())};
      j["biases"] = {vec_of(output_bias())};
    } else {
      j["weights"] = {vec_of(hidden_weight()), vec_of(output_weight())};
      j["biases"] = {vec_of(hidden_bias()), vec_of(output_bias())};
      j["zeta"] = zeta_value();
    }
    return j;
  }

  static PriorNetwork from_json(const nlohmann::json& j) {
    std::vector<OutputBlock> blocks;
    for (const auto& b : j.at("blocks"))
      blocks.push_back({activation_from_string(b.at("activation").get<std::string>()), b.at("size").get<std::size_t>()});
    const auto arch = architecture_from_string(j.at("architecture").get<std::string>());
    const auto p = j.at("p").get<std::size_t>();
    const double delta = j.at("delta").get<double>();
    PriorNetwork net = arch == Architecture::SingleLayer
                           ? single_layer(p, blocks, delta)
                           : two_layer_prelu(p, j.at("hidden_dim").get<std::size_t>(), blocks, delta,
                                             j.at("zeta").get<double>());
    if (j.at("q").get<std::size_t>() != net.q_) throw ConfigError("network json: q does not match blocks");
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    auto copy_into = [](const nlohmann::json& src, double* dst, std::size_t n) {
      if (src.size() != n) throw ConfigError("network json: array has wrong length");
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i].get<double>();
    };
    if (arch == Architecture::SingleLayer) {
      copy_into(ws.at(0), net.params_.data(), net.q_ * p);
      copy_into(bs.at(0), net.params_.data() + net.off_b_out(), net.q_);
    } else {
      copy_into(ws.at(0), net.params_.data(), net.h_ * p);
      copy_into(bs.at(0), net.params_.data() + net.h_ * p, net.h_);
      copy_into(ws.at(1), net.params_.data() + net.off_w2(), net.q_ * net.h_);
      copy_into(bs.at(1), net.params_.data() + net.off_b_out(), net.q_);
    }
    return net;
  }

 private:
  void init_shape(std::size_t p, std::size_t hidden, std::vector<OutputBlock> blocks, double delta) {
    if (p == 0) throw std::invalid_argument("latent dimension must be >= 1");
    if (blocks.empty()) throw std::invalid_argument("network needs at least one output block");
    if (delta < 0.0) throw std::invalid_argument("softmax guard must be nonnegative");
    q_ = 0;
    for (const auto& b : blocks) {
      if (b.size == 0) throw std::invalid_argument("empty output block");
      if (b.activation == Activation::Softmax && (b.size < 2 || delta * static_cast<double>(b.size) >= 1.0))
        throw std::invalid_argument("softmax block needs size >= 2 and size*delta < 1");
      q_ += b.size;
    }
    p_ = p;
    h_ = hidden;
    delta_ = delta;
    blocks_ = std::move(blocks);
    const std::size_t n = arch_ == Architecture::SingleLayer ? q_ * p_ + q_ : h_ * p_ + h_ + q_ * h_ + q_ + 1;
    params_ = Vec::Zero(static_cast<Eigen::Index>(n));
  }

  std::size_t off_w2() const { return h_ * p_ + h_; }
  std::size_t off_w_out() const { return arch_ == Architecture::SingleLayer ? 0 : off_w2(); }
  std::size_t off_b_out() const { return arch_ == Architecture::SingleLayer ? q_ * p_ : off_w2() + q_ * h_; }

  void check_latent(std::span<const double> eps) const {
    if (eps.size() != p_) throw std::invalid_argument("latent vector has wrong dimension");
    if (!all_finite(eps)) throw std::invalid_argument("latent vector must be finite");
  }

  void apply_activations(Trace& tr) const {
    tr.unguarded.resize(tr.pre.size());
    tr.theta.resize(tr.pre.size());
    Eigen::Index start = 0;
    for (const auto& blk : blocks_) {
      const auto n = static_cast<Eigen::Index>(blk.size);
      auto z = tr.pre.segment(start, n);
      auto u = tr.unguarded.segment(start, n);
      auto t = tr.theta.segment(start, n);
      switch (blk.activation) {
        case Activation::Softmax: {
          const double mx = z.maxCoeff();
          u = (z.array() - mx).exp();
          u /= u.sum();
          t = (1.0 - static_cast<double>(n) * delta_) * u.array() + delta_;
          break;
        }
        // floors keep extreme pre-activations inside the open parameter space
        case Activation::Exp:
          u = z.array().exp();
          t = u.array().max(kTiny).min(kHuge);
          break;
        case Activation::Softplus:
          u = z.unaryExpr([](double x) { return special::softplus(x); });
          t = u.array().max(kTiny).min(kHuge);
          break;
        case Activation::Sigmoid:
          u = z.unaryExpr([](double x) { return special::sigmoid(x); });
          t = u.array().max(kTiny).min(kBelowOne);
          break;
        case Activation::Identity: u = z; t = u; break;
      }
      start += n;
    }
  }

  // (d theta / d pre)^T v
  Vec activation_vjp(const Trace& tr, const Vec& v) const {
    Vec g(v.size());
    Eigen::Index start = 0;
    for (const auto& blk : blocks_) {
      const auto n = static_cast<Eigen::Index>(blk.size);
      const auto u = tr.unguarded.segment(start, n);
      const auto vv = v.segment(start, n);
      auto gg = g.segment(start, n);
      switch (blk.activation) {
        case Activation::Softmax: {
          const double scale = 1.0 - static_cast<double>(n) * delta_;
          const double dot = u.dot(vv);
          gg = scale * (u.array() * (vv.array() - dot));
          break;
        }
        case Activation::Exp: gg = u.array() * vv.array(); break;
        case Activation::Softplus:
          for (Eigen::Index i = 0; i < n; ++i) gg[i] = special::sigmoid(tr.pre[start + i]) * vv[i];
          break;
        case Activation::Sigmoid: gg = u.array() * (1.0 - u.array()) * vv.array(); break;
        case Activation::Identity: gg = vv; break;
      }
      start += n;
    }
    return g;
  }

  static constexpr double kTiny = std::numeric_limits<double>::min();
  static constexpr double kHuge = std::numeric_limits<double>::max();
  static constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2;

  Architecture arch_ = Architecture::SingleLayer;
  std::size_t p_ = 0, q_ = 0, h_ = 0;
  double delta_ = 1e-6;
  std::vector<OutputBlock> blocks_;
  Vec params_;
};

}  // namespace varp
