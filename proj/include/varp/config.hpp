#pragma once

// Experiment configuration: a TOML document with one table per stage.

#include "varp/core.hpp"
#include "varp/divergences.hpp"
#include "varp/objectives.hpp"
#include "varp/optimizer.hpp"
#include "varp/posterior_mh.hpp"
#include "varp/pushforward.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace varp {

struct ModelConfig {
  std::string kind;  // multinomial | probit | gaussvar
  int n = 10, q = 4;
  double mu_a = 0.0, sigma2_a = 1.0;
  double mu = 0.0;
  std::size_t dim() const { return kind == "multinomial" ? static_cast<std::size_t>(q) : kind == "probit" ? 2 : 1; }
};

struct NetworkConfig {
  Architecture architecture = Architecture::SingleLayer;
  std::size_t p = 50;
  std::size_t hidden_dim = 10;
  std::vector<OutputBlock> blocks;
  double init_std = 0.05;
  double delta = 1e-6;
  double zeta0 = 0.25;

  std::size_t output_dim() const {
    std::size_t q = 0;
    for (const auto& b : blocks) q += b.size;
    return q;
  }

  PriorNetwork build(std::uint64_t seed) const {
    PriorNetwork net = architecture == Architecture::SingleLayer
                           ? PriorNetwork::single_layer(p, blocks, delta)
                           : PriorNetwork::two_layer_prelu(p, hidden_dim, blocks, delta, zeta0);
    net.initialize(seed, init_std);
    return net;
  }
};

struct DivergenceConfig {
  std::string kind = "alpha";
  double alpha = 0.5;
  bool stabilized = true;
  bool allow_alpha_near_one = false;

  DivergenceSpec spec() const {
    return kind == "kl" ? DivergenceSpec::kl() : DivergenceSpec::alpha_div(alpha, stabilized, allow_alpha_near_one);
  }
};

struct OptimizerConfig {
  double lr = 0.0025;
  std::size_t epochs = 2000;
  std::size_t monitor_every = 20;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.adam = {lr, beta1, beta2, eps};
    tc.monitor_every = monitor_every;
    return tc;
  }
};

struct ConstraintConfig {
  ConstraintFunction a;
  std::optional<double> target;  // absent -> estimated by the pipeline
  bool skip_stage1 = false;
  std::size_t stage1_epochs = 0;  // 0 -> optimizer.epochs
  double stage1_lr = 0.0;         // 0 -> optimizer.lr
  std::size_t moment_samples = 100000;
  std::size_t constraint_samples = 10000;
  double eta_tilde0 = 1.0;
  double v = 2.0, M = 0.005, eta_tilde_max = 1e4;
  std::size_t period = 100;
};

struct DataConfig {
  std::string source = "simulate";  // simulate | file
  std::vector<double> theta_true;
  std::size_t N = 10;
  std::uint64_t seed = 1;
  std::string path;
  bool require_non_degenerate = true;
};

struct PosteriorConfig {
  bool enabled = true;
  MHConfig mh;
  std::string proposal = "identity";  // identity | structured
  double rho = 0.1;
  DataConfig data;
};

struct EvaluationConfig {
  std::size_t prior_samples = 20000;
  std::size_t reference_samples = 20000;
  std::size_t null_permutations = 20;
  std::size_t null_rows = 1000;
  std::size_t compare_samples = 5000;  // probit posterior comparison
  std::size_t grid_n = 200;
  std::size_t mh_theta_iters = 50000;
  std::size_t mh_theta_keep = 25000;
  std::size_t final_constraint_samples = 100000;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  ModelConfig model;
  NetworkConfig network;
  std::optional<NetworkConfig> network_constrained;
  DivergenceConfig divergence;
  EstimatorConfig estimator;
  OptimizerConfig optimizer;
  std::optional<ConstraintConfig> constraint;
  PosteriorConfig posterior;
  EvaluationConfig evaluation;
  std::string source_text;  // the TOML this was parsed from
};

namespace detail {

// Typed access to one TOML table that remembers the keys it has read,
// so unknown keys can be reported by their full path.
class Section {
 public:
  Section(const toml::table* t, std::string path) : t_(t), path_(std::move(path)) {}

  bool present() const { return t_ != nullptr; }
  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return t_ && t_->contains(k); }

  template <typename T>
  std::optional<T> opt(const std::string& k) {
    seen_.insert(k);
    if (!t_) return std::nullopt;
    const toml::node* n = t_->get(k);
    if (!n) return std::nullopt;
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = n->value<double>()) return *v;
      throw ConfigError(key_path(k) + ": expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->as_boolean()) return v->get();
      throw ConfigError(key_path(k) + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n->as_string()) return v->get();
      throw ConfigError(key_path(k) + ": expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      auto v = n->as_integer();
      if (!v) throw ConfigError(key_path(k) + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v->get() < 0) throw ConfigError(key_path(k) + ": expected a nonnegative integer");
      return static_cast<T>(v->get());
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      auto arr = n->as_array();
      if (!arr) throw ConfigError(key_path(k) + ": expected an array of numbers");
      std::vector<double> out;
      for (std::size_t i = 0; i < arr->size(); ++i) {
        auto v = arr->get(i)->value<double>();
        if (!v) throw ConfigError(key_path(k) + "[" + std::to_string(i) + "]: expected a number");
        out.push_back(*v);
      }
      return out;
    }
    return std::nullopt;
  }

  template <typename T>
  T get(const std::string& k, T fallback) {
    auto v = opt<T>(k);
    return v ? *v : fallback;
  }

  template <typename T>
  T require(const std::string& k) {
    auto v = opt<T>(k);
    if (!v) throw ConfigError(key_path(k) + ": required field is missing");
    return *v;
  }

  Section sub(const std::string& k) {
    seen_.insert(k);
    if (!t_) return {nullptr, key_path(k)};
    const toml::node* n = t_->get(k);
    if (!n) return {nullptr, key_path(k)};
    if (!n->as_table()) throw ConfigError(key_path(k) + ": expected a table");
    return {n->as_table(), key_path(k)};
  }

  const toml::array* array(const std::string& k) {
    seen_.insert(k);
    if (!t_) return nullptr;
    const toml::node* n = t_->get(k);
    if (!n) return nullptr;
    if (!n->as_array()) throw ConfigError(key_path(k) + ": expected an array");
    return n->as_array();
  }

  void reject_unknown() const {
    if (!t_) return;
    for (const auto& [k, _] : *t_) {
      const std::string key(k.str());
      if (!seen_.count(key)) throw ConfigError(key_path(key) + ": unknown field");
    }
  }

 private:
  const toml::table* t_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check_positive(double v, const std::string& path) {
  if (!(v > 0.0)) throw ConfigError(path + ": must be positive");
}

inline NetworkConfig parse_network(Section s) {
  NetworkConfig n;
  const auto arch = s.require<std::string>("architecture");
  try {
    n.architecture = architecture_from_string(arch);
  } catch (const ConfigError&) {
    throw ConfigError(s.key_path("architecture") + ": expected single_layer or two_layer_prelu");
  }
  n.p = s.require<std::size_t>("p");
  if (n.p < 1) throw ConfigError(s.key_path("p") + ": must be >= 1");
  n.hidden_dim = s.get<std::size_t>("hidden_dim", 10);
  n.init_std = s.get<double>("init_std", 0.05);
  n.delta = s.get<double>("delta", 1e-6);
  n.zeta0 = s.get<double>("zeta0", 0.25);
  check_positive(n.init_std, s.key_path("init_std"));
  check_positive(n.zeta0, s.key_path("zeta0"));
  if (n.delta < 0.0) throw ConfigError(s.key_path("delta") + ": must be nonnegative");
  const auto* blocks = s.array("blocks");
  if (!blocks || blocks->empty()) throw ConfigError(s.key_path("blocks") + ": required non-empty array of tables");
  for (std::size_t i = 0; i < blocks->size(); ++i) {
    const std::string bp = s.key_path("blocks") + "[" + std::to_string(i) + "]";
    Section b(blocks->get(i)->as_table(), bp);
    if (!b.present()) throw ConfigError(bp + ": expected a table");
    OutputBlock ob;
    try {
      ob.activation = activation_from_string(b.require<std::string>("activation"));
    } catch (const ConfigError& e) {
      throw ConfigError(bp + ".activation: " + e.what());
    }
    ob.size = b.require<std::size_t>("size");
    if (ob.size < 1) throw ConfigError(bp + ".size: must be >= 1");
    b.reject_unknown();
    n.blocks.push_back(ob);
  }
  s.reject_unknown();
  return n;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  using detail::Section;
  ExperimentConfig c;
  c.source_text = text;
  Section top(&root, "");
  c.name = top.get<std::string>("name", "experiment");
  c.seed = top.get<std::uint64_t>("seed", 1);
  c.output_dir = top.get<std::string>("output_dir", "out/" + c.name);

  // model
  {
    auto s = top.sub("model");
    if (!s.present()) throw ConfigError("model: required section is missing");
    c.model.kind = s.require<std::string>("kind");
    if (c.model.kind == "multinomial") {
      c.model.n = s.require<int>("n");
      c.model.q = s.require<int>("q");
      if (c.model.n < 1) throw ConfigError("model.n: must be >= 1");
      if (c.model.q < 2) throw ConfigError("model.q: must be >= 2");
    } else if (c.model.kind == "probit") {
      c.model.mu_a = s.get<double>("mu_a", 0.0);
      c.model.sigma2_a = s.get<double>("sigma2_a", 1.0);
      detail::check_positive(c.model.sigma2_a, "model.sigma2_a");
    } else if (c.model.kind == "gaussvar") {
      c.model.mu = s.get<double>("mu", 0.0);
    } else {
      throw ConfigError("model.kind: expected multinomial, probit or gaussvar, got '" + c.model.kind + "'");
    }
    s.reject_unknown();
  }

  {
    auto s = top.sub("network");
    if (!s.present()) throw ConfigError("network: required section is missing");
    c.network = detail::parse_network(s);
    if (c.network.output_dim() != c.model.dim())
      throw ConfigError("network.blocks: output size " + std::to_string(c.network.output_dim()) +
                        " does not match the model dimension " + std::to_string(c.model.dim()));
  }
  {
    auto s = top.sub("network_constrained");
    if (s.present()) {
      c.network_constrained = detail::parse_network(s);
      if (c.network_constrained->output_dim() != c.model.dim())
        throw ConfigError("network_constrained.blocks: output size does not match the model dimension");
    }
  }

  {
    auto s = top.sub("divergence");
    c.divergence.kind = s.get<std::string>("kind", "alpha");
    c.divergence.alpha = s.get<double>("alpha", 0.5);
    c.divergence.stabilized = s.get<bool>("stabilized", true);
    c.divergence.allow_alpha_near_one = s.get<bool>("allow_alpha_near_one", false);
    if (c.divergence.kind != "kl" && c.divergence.kind != "alpha")
      throw ConfigError("divergence.kind: expected kl or alpha");
    try {
      (void)c.divergence.spec();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("divergence.alpha: ") + e.what());
    }
    s.reject_unknown();
  }

  {
    auto s = top.sub("estimator");
    auto& e = c.estimator;
    e.N = s.get<std::size_t>("N", 10);
    e.T = s.get<std::size_t>("T", 50);
    e.U = s.get<std::size_t>("U", 1000);
    e.n_outer = s.get<std::size_t>("n_outer", 200);
    e.n_theta = s.get<std::size_t>("n_theta", 50);
    const auto obj = s.get<std::string>("objective", "lower_bound");
    if (obj == "lower_bound") e.objective = Objective::LowerBound;
    else if (obj == "full_mi") e.objective = Objective::FullMI;
    else throw ConfigError("estimator.objective: expected lower_bound or full_mi");
    const auto mle = s.get<std::string>("mle", "auto");
    if (mle == "auto") e.mle = MleSource::Auto;
    else if (mle == "proxy") e.mle = MleSource::Proxy;
    else if (mle == "exact") e.mle = MleSource::Exact;
    else throw ConfigError("estimator.mle: expected auto, proxy or exact");
    if (e.mle == MleSource::Exact && c.model.kind == "probit")
      throw ConfigError("estimator.mle: the probit model has no closed-form MLE");
    e.common_random_numbers = s.get<bool>("common_random_numbers", true);
    try {
      e.validate();
    } catch (const ConfigError& err) {
      throw ConfigError(err.what());
    }
    if (e.objective == Objective::LowerBound && !c.divergence.spec().decreasing())
      throw ConfigError("divergence.stabilized: the lower bound objective needs the stabilized alpha variant");
    s.reject_unknown();
  }

  {
    auto s = top.sub("optimizer");
    auto& o = c.optimizer;
    o.lr = s.get<double>("lr", 0.0025);
    o.epochs = s.get<std::size_t>("epochs", 2000);
    o.monitor_every = s.get<std::size_t>("monitor_every", 20);
    o.beta1 = s.get<double>("beta1", 0.9);
    o.beta2 = s.get<double>("beta2", 0.999);
    o.eps = s.get<double>("eps", 1e-8);
    if (o.lr < 0.0) throw ConfigError("optimizer.lr: must be nonnegative");
    if (o.monitor_every < 1) throw ConfigError("optimizer.monitor_every: must be >= 1");
    s.reject_unknown();
  }

  {
    auto s = top.sub("constraint");
    if (s.present()) {
      if (c.divergence.kind != "alpha") throw ConfigError("constraint: the constrained pipeline needs divergence.kind = alpha");
      ConstraintConfig k;
      const auto kind = s.require<std::string>("kind");
      const auto comp = s.get<std::size_t>("component", 0);
      if (comp >= c.model.dim()) throw ConfigError("constraint.component: out of range for the model");
      if (kind == "moment") {
        k.a = ConstraintFunction::moment(s.require<double>("kappa"), comp);
      } else if (kind == "rational") {
        k.a = ConstraintFunction::rational(s.require<double>("beta"), s.require<double>("tau"), comp);
      } else if (kind == "tabulated") {
        try {
          k.a = ConstraintFunction::tabulated(s.require<std::vector<double>>("xs"), s.require<std::vector<double>>("ys"), comp);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("constraint.xs: ") + e.what());
        }
      } else {
        throw ConfigError("constraint.kind: expected moment, rational or tabulated");
      }
      k.target = s.opt<double>("target");
      k.skip_stage1 = s.get<bool>("skip_stage1", false);
      if (k.skip_stage1 && !k.target) throw ConfigError("constraint.skip_stage1: requires constraint.target");
      k.stage1_epochs = s.get<std::size_t>("stage1_epochs", 0);
      k.stage1_lr = s.get<double>("stage1_lr", 0.0);
      k.moment_samples = s.get<std::size_t>("moment_samples", 100000);
      k.constraint_samples = s.get<std::size_t>("constraint_samples", 10000);
      k.eta_tilde0 = s.get<double>("eta_tilde0", 1.0);
      k.v = s.get<double>("v", 2.0);
      k.M = s.get<double>("M", 0.005);
      k.eta_tilde_max = s.get<double>("eta_tilde_max", 1e4);
      k.period = s.get<std::size_t>("period", 100);
      if (k.period < 1) throw ConfigError("constraint.period: must be >= 1");
      if (k.constraint_samples < 100) throw ConfigError("constraint.constraint_samples: must be >= 100");
      if (k.moment_samples < 100) throw ConfigError("constraint.moment_samples: must be >= 100");
      detail::check_positive(k.eta_tilde0, "constraint.eta_tilde0");
      if (!(k.v > 1.0)) throw ConfigError("constraint.v: must be > 1");
      detail::check_positive(k.M, "constraint.M");
      detail::check_positive(k.eta_tilde_max, "constraint.eta_tilde_max");
      c.constraint = k;
      s.reject_unknown();
    }
  }

  {
    auto s = top.sub("posterior");
    auto& p = c.posterior;
    p.enabled = s.present() ? s.get<bool>("enabled", true) : false;
    p.mh.total_iters = s.get<std::size_t>("total_iters", 100000);
    p.mh.keep_last = s.get<std::size_t>("keep_last", 50000);
    p.mh.adapt_batch = s.get<std::size_t>("adapt_batch", 100);
    p.mh.target_accept = s.get<double>("target_accept", 0.40);
    p.mh.initial_scale = s.get<double>("initial_scale", 0.0);
    p.proposal = s.get<std::string>("proposal", "identity");
    p.rho = s.get<double>("rho", 0.1);
    if (p.proposal != "identity" && p.proposal != "structured")
      throw ConfigError("posterior.proposal: expected identity or structured");
    if (!(p.rho > 0.0 && p.rho <= 1.0)) throw ConfigError("posterior.rho: must lie in (0, 1]");
    if (p.enabled) {
      try {
        p.mh.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(e.what());
      }
    }
    auto d = s.sub("data");
    if (p.enabled && !d.present()) throw ConfigError("posterior.data: required when the posterior is enabled");
    p.data.source = d.get<std::string>("source", "simulate");
    if (p.data.source == "simulate") {
      if (p.enabled) {
        p.data.theta_true = d.require<std::vector<double>>("theta_true");
        if (p.data.theta_true.size() != c.model.dim())
          throw ConfigError("posterior.data.theta_true: length does not match the model dimension");
      }
      p.data.N = d.get<std::size_t>("N", 10);
      p.data.seed = d.get<std::uint64_t>("seed", 1);
    } else if (p.data.source == "file") {
      p.data.path = d.require<std::string>("path");
      (void)d.opt<std::vector<double>>("theta_true");
    } else {
      throw ConfigError("posterior.data.source: expected simulate or file");
    }
    p.data.require_non_degenerate = d.get<bool>("require_non_degenerate", true);
    d.reject_unknown();
    s.reject_unknown();
  }

  {
    auto s = top.sub("evaluation");
    auto& e = c.evaluation;
    e.prior_samples = s.get<std::size_t>("prior_samples", 20000);
    e.reference_samples = s.get<std::size_t>("reference_samples", 20000);
    e.null_permutations = s.get<std::size_t>("null_permutations", 20);
    e.null_rows = s.get<std::size_t>("null_rows", 1000);
    e.compare_samples = s.get<std::size_t>("compare_samples", 5000);
    e.grid_n = s.get<std::size_t>("grid_n", 200);
    e.mh_theta_iters = s.get<std::size_t>("mh_theta_iters", 50000);
    e.mh_theta_keep = s.get<std::size_t>("mh_theta_keep", 25000);
    e.final_constraint_samples = s.get<std::size_t>("final_constraint_samples", 100000);
    if (e.prior_samples < 2 || e.reference_samples < 2) throw ConfigError("evaluation: sample counts must be >= 2");
    if (e.null_permutations < 2) throw ConfigError("evaluation.null_permutations: must be >= 2");
    if (e.grid_n < 2) throw ConfigError("evaluation.grid_n: must be >= 2");
    if (e.mh_theta_keep < 1 || e.mh_theta_keep > e.mh_theta_iters)
      throw ConfigError("evaluation.mh_theta_keep: must lie in [1, mh_theta_iters]");
    s.reject_unknown();
  }

  top.reject_unknown();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace varp
