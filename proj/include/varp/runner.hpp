#pragma once

// Config-driven experiment runner: train, sample the posterior, evaluate
// against reference distributions and persist artifacts.

#include "varp/config.hpp"
#include "varp/evaluation.hpp"
#include "varp/optimizer.hpp"
#include "varp/posterior_mh.hpp"
#include "varp/stat_models.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace varp {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 1;
  bool quick = false;
  bool verbose = false;
};

struct RunOutput {
  fs::path dir;
  json metrics;
  json diagnostics;
};

// ---------------------------------------------------------------- TOML overrides

using TomlValue = std::variant<std::int64_t, double, bool, std::string, std::vector<double>>;

// Sets a dotted key, creating intermediate tables.
inline void toml_set(toml::table& root, const std::string& dotted, const TomlValue& value) {
  toml::table* t = &root;
  std::string rest = dotted;
  for (auto dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
    const std::string head = rest.substr(0, dot);
    rest = rest.substr(dot + 1);
    if (!t->contains(head)) t->insert(head, toml::table{});
    t = t->get(head)->as_table();
    if (!t) throw ConfigError(dotted + ": '" + head + "' is not a table");
  }
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, std::vector<double>>) {
          toml::array arr;
          for (double x : v) arr.push_back(x);
          t->insert_or_assign(rest, std::move(arr));
        } else {
          t->insert_or_assign(rest, v);
        }
      },
      value);
}

inline std::string apply_overrides(const std::string& text, const std::vector<std::pair<std::string, TomlValue>>& kv) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config: ") + std::string(e.description()));
  }
  for (const auto& [k, v] : kv) toml_set(root, k, v);
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

// Reduced budgets for smoke runs; every change goes through the TOML so
// the written config.toml reproduces the run.
inline std::vector<std::pair<std::string, TomlValue>> quick_overrides(const ExperimentConfig& c) {
  auto cap = [](std::size_t v, std::size_t m) { return static_cast<std::int64_t>(std::min(v, m)); };
  std::vector<std::pair<std::string, TomlValue>> kv = {
      {"optimizer.epochs", cap(c.optimizer.epochs, 150)},
      {"optimizer.monitor_every", cap(c.optimizer.monitor_every, 25)},
      {"estimator.U", cap(c.estimator.U, 100)},
      {"estimator.n_outer", cap(c.estimator.n_outer, 50)},
      {"evaluation.prior_samples", cap(c.evaluation.prior_samples, 4000)},
      {"evaluation.reference_samples", cap(c.evaluation.reference_samples, 4000)},
      {"evaluation.null_permutations", cap(c.evaluation.null_permutations, 5)},
      {"evaluation.null_rows", cap(c.evaluation.null_rows, 500)},
      {"evaluation.compare_samples", cap(c.evaluation.compare_samples, 1000)},
      {"evaluation.grid_n", cap(c.evaluation.grid_n, 40)},
      {"evaluation.mh_theta_iters", cap(c.evaluation.mh_theta_iters, 10000)},
      {"evaluation.mh_theta_keep", cap(c.evaluation.mh_theta_keep, 5000)},
      {"evaluation.final_constraint_samples", cap(c.evaluation.final_constraint_samples, 10000)},
  };
  if (c.posterior.enabled) {
    kv.emplace_back("posterior.total_iters", cap(c.posterior.mh.total_iters, 10000));
    kv.emplace_back("posterior.keep_last", cap(c.posterior.mh.keep_last, 5000));
  }
  if (c.constraint) {
    const std::size_t s1 = c.constraint->stage1_epochs ? c.constraint->stage1_epochs : c.optimizer.epochs;
    kv.emplace_back("constraint.stage1_epochs", cap(s1, 150));
    kv.emplace_back("constraint.moment_samples", cap(c.constraint->moment_samples, 10000));
    kv.emplace_back("constraint.constraint_samples", cap(c.constraint->constraint_samples, 2000));
    kv.emplace_back("constraint.period", cap(c.constraint->period, 50));
  }
  return kv;
}

// Parses `text`, then applies seed/out/quick options to the TOML itself.
inline ExperimentConfig effective_config(const std::string& text, const RunOptions& opt,
                                         const std::string& origin = "config") {
  ExperimentConfig base = parse_config_text(text, origin);
  std::vector<std::pair<std::string, TomlValue>> kv;
  if (opt.seed) {
    if (*opt.seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      throw ConfigError("seed: must fit in a signed 64-bit integer");
    kv.emplace_back("seed", static_cast<std::int64_t>(*opt.seed));
  }
  if (opt.out) kv.emplace_back("output_dir", *opt.out);
  if (opt.quick) {
    const auto q = quick_overrides(base);
    kv.insert(kv.end(), q.begin(), q.end());
  }
  if (kv.empty()) return base;
  return parse_config_text(apply_overrides(text, kv), origin);
}

// ---------------------------------------------------------------- artifacts

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Output directory staged as <dir>.partial and renamed on commit; an
// uncommitted stage is removed.
class ArtifactDir {
 public:
  explicit ArtifactDir(fs::path final_dir) : final_(std::move(final_dir)) {
    partial_ = final_;
    partial_ += ".partial";
    fs::remove_all(partial_);
    fs::create_directories(partial_);
  }
  ArtifactDir(const ArtifactDir&) = delete;
  ArtifactDir& operator=(const ArtifactDir&) = delete;
  ~ArtifactDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(partial_, ec);
    }
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream os(partial_ / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write artifact " + (partial_ / name).string());
    os << content;
    if (!os) throw std::runtime_error("failed writing artifact " + (partial_ / name).string());
    files_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  const std::vector<std::string>& files() const { return files_; }
  const fs::path& final_path() const { return final_; }

  void commit() {
    if (fs::exists(final_)) {
      if (!fs::exists(final_ / "manifest.json"))
        throw std::runtime_error("refusing to replace " + final_.string() + ": not an artifact directory");
      fs::remove_all(final_);
    }
    fs::rename(partial_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, partial_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

inline std::string matrix_csv(const RowMat& m, const std::string& prefix = "theta") {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << prefix << j + 1;
  os << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
    os << "\n";
  }
  return os.str();
}

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// FNV-1a over the decimal rendering of the parameters.
inline std::string params_checksum(const Vec& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    for (char ch : fmt(p[i]) + ";") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Evenly spaced rows, `count` of them (or all when fewer).
inline RowMat thin_rows(const RowMat& m, std::size_t count) {
  const auto n = static_cast<std::size_t>(m.rows());
  if (count >= n) return m;
  RowMat out(static_cast<Eigen::Index>(count), m.cols());
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(i * n / count));
  return out;
}

inline RowMat to_rowmat(const Mat& m) { return m; }

inline json mmd_json(const RowMat& xs, const RowMat& ys, const EvaluationConfig& ev, std::uint64_t seed) {
  const double v = mmd2_unbiased(xs, ys);
  const double null = mmd_null_scale(xs, ys, ev.null_permutations, seed, ev.null_rows);
  return {{"mmd2", v},
          {"mmd", std::sqrt(std::max(v, 0.0))},
          {"mmd2_negative", v < 0.0},
          {"mmd2_null_scale", null},
          {"null_rows", std::min<std::size_t>(ev.null_rows, static_cast<std::size_t>(std::min(xs.rows(), ys.rows())))},
          {"rows", std::min<std::size_t>(kMmdRowCap, static_cast<std::size_t>(std::min(xs.rows(), ys.rows())))}};
}

inline json mi_trace_json(const std::vector<MITracePoint>& tr, const DivergenceSpec& div) {
  json j;
  if (tr.empty()) return j;
  const auto& last = tr.back();
  j["final"] = {{"epoch", last.epoch}, {"mean", last.mean}, {"lo95", last.lo95}, {"hi95", last.hi95},
                {"std_error", last.std_error}};
  j["initial"] = {{"mean", tr.front().mean}, {"std_error", tr.front().std_error}};
  if (div.kind == DivergenceKind::Alpha) {
    const double bound = mi_upper_bound(div.alpha);
    bool ok = true;
    for (const auto& p : tr) ok = ok && p.mean <= bound + 3.0 * p.std_error && p.mean >= -3.0 * p.std_error;
    j["upper_bound"] = bound;
    j["within_bounds"] = ok;
  }
  return j;
}

inline std::string mi_trace_csv(const std::vector<MITracePoint>& tr) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mi_mean,mi_lo95,mi_hi95\n";
  for (const auto& p : tr) os << p.epoch << "," << p.mean << "," << p.lo95 << "," << p.hi95 << "\n";
  return os.str();
}

inline std::string constraint_trace_csv(const std::vector<ConstraintTracePoint>& tr) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,constraint,mean,gap,eta,eta_tilde\n";
  for (const auto& p : tr)
    for (Eigen::Index k = 0; k < p.mean.size(); ++k)
      os << p.epoch << "," << k << "," << p.mean[k] << "," << p.gap[k] << "," << p.eta[k] << "," << p.eta_tilde[k]
         << "\n";
  return os.str();
}

inline json mh_json(const MHDiagnostics& d) {
  json ac = json::array();
  for (const auto& c : d.autocorr) ac.push_back({{"lag1", c[0]}, {"lag5", c[1]}, {"lag10", c[2]}});
  return {{"accept_burnin", d.accept_burnin}, {"accept_kept", d.accept_kept},   {"final_scale", d.final_scale},
          {"autocorr", ac},                   {"zero_accept_batches", d.zero_accept_batches},
          {"reflections", d.reflections},     {"warnings", d.warnings}};
}

template <typename Data>
std::string data_csv(const Data& d) {
  std::ostringstream os;
  write_csv(os, d);
  return os.str();
}

// ---------------------------------------------------------------- model hooks

inline Multinomial make_model(const ModelConfig& m, std::type_identity<Multinomial>) { return {m.n, m.q}; }
inline Probit make_model(const ModelConfig& m, std::type_identity<Probit>) { return {m.mu_a, m.sigma2_a}; }
inline GaussVar make_model(const ModelConfig& m, std::type_identity<GaussVar>) { return GaussVar(m.mu); }

struct RunContext {
  const ExperimentConfig& cfg;
  const RunOptions& opt;
  DivergenceSpec div;
  std::uint64_t seed;
  json metrics = json::object();
  json diagnostics = json::object();
  std::vector<std::string> notes;
};

template <StatModel Model>
typename Model::Data acquire_data(const Model& model, RunContext& ctx) {
  const auto& d = ctx.cfg.posterior.data;
  if (d.source == "file") return read_dataset(model, d.path);
  if constexpr (std::is_same_v<Model, Probit>) {
    for (std::uint64_t k = 0; k < 1000; ++k) {
      auto x = sample_data(model, d.theta_true, d.N, d.seed + k);
      if (!d.require_non_degenerate || !Probit::is_degenerate(x)) {
        ctx.diagnostics["data"] = {{"seed_used", d.seed + k}, {"degenerate_draws_skipped", k}};
        return x;
      }
    }
    throw std::runtime_error("no non-degenerate probit dataset in 1000 draws");
  } else {
    return sample_data(model, d.theta_true, d.N, d.seed);
  }
}

// Prior-level metrics.
inline void evaluate_prior(const Multinomial& model, const PriorNetwork&, const RowMat& prior, RunContext& ctx) {
  const auto& ev = ctx.cfg.evaluation;
  const Vec half = Vec::Constant(static_cast<Eigen::Index>(model.dim()), 0.5);
  const RowMat ref = reference::dirichlet_sample(half, ev.reference_samples, stream_key(ctx.seed, 0xe1, 1));
  ctx.metrics["prior"] = mmd_json(prior, ref, ev, stream_key(ctx.seed, 0xe1, 2));
  ctx.metrics["prior"]["reference"] = "dirichlet(1/2)";
}

inline void evaluate_prior(const GaussVar&, const PriorNetwork&, const RowMat& prior, RunContext& ctx) {
  if (!ctx.cfg.constraint) return;
  const auto& k = *ctx.cfg.constraint;
  // closed-form target only for the rational a with beta = -1, tau = 1 under alpha = 1/2
  if (k.a.kind == ConstraintFunction::Kind::Rational && k.a.beta == -1.0 && k.a.tau == 1.0 &&
      ctx.div.alpha == 0.5) {
    ctx.metrics["prior"]["ks"] = ks_statistic(column(prior, 0), reference::gaussvar_constrained_prior_cdf);
    ctx.metrics["prior"]["reference"] = "2 theta / (1 + theta^2)^2";
  }
}

inline double probit_log_prior_extra(const RunContext& ctx, const Vec& th) {
  if (!ctx.cfg.constraint) return 0.0;
  const double a = ctx.cfg.constraint->a(th);
  return a > 0.0 ? std::log(a) / ctx.div.alpha : kNegInf;
}

inline void evaluate_prior(const Probit& model, const PriorNetwork&, const RowMat&, RunContext& ctx) {
  const JeffreysQuadrature q;
  ctx.metrics["jeffreys"] = {{"slope_small_theta2", probit_jeffreys_slope(model, 1.0, 0.01, 1.1, q)},
                             {"slope_large_theta2", probit_jeffreys_slope(model, 1.0, 10.0, 1.1, q)},
                             {"slope_theta1", 1.0},
                             {"expected_small", -1.0},
                             {"expected_large", -3.0}};
}

// Posterior-level metrics; `kept` is the pushed-forward kept window.
inline void evaluate_posterior(const Multinomial&, const Multinomial::Data& x, const RowMat& kept, RunContext& ctx,
                               ArtifactDir&) {
  const auto& ev = ctx.cfg.evaluation;
  const Vec gamma = reference::dirichlet_posterior_params(x);
  const RowMat ref = reference::dirichlet_sample(gamma, ev.reference_samples, stream_key(ctx.seed, 0xe2, 1));
  auto j = mmd_json(kept, ref, ev, stream_key(ctx.seed, 0xe2, 2));
  j["reference"] = "dirichlet(gamma)";
  j["gamma"] = vec_json(gamma);
  ctx.metrics["posterior"].update(j);
}

inline void evaluate_posterior(const GaussVar&, const GaussVar::Data& x, const RowMat& kept, RunContext& ctx,
                               ArtifactDir&) {
  const double N = static_cast<double>(x.size());
  const auto th = column(kept, 0);
  if (!ctx.cfg.constraint) {
    ctx.metrics["posterior"]["ks"] =
        ks_statistic(th, [&](double v) { return reference::inverse_gamma_cdf(0.5 * N, 0.5 * x.ss, v); });
    ctx.metrics["posterior"]["reference"] = "inverse_gamma(N/2, S/2)";
    return;
  }
  const auto& k = *ctx.cfg.constraint;
  if (k.a.kind == ConstraintFunction::Kind::Rational && k.a.beta == -1.0 && k.a.tau == 1.0 &&
      ctx.div.alpha == 0.5) {
    const reference::GaussVarConstrainedPosterior post(N, x.ss);
    const auto [mc, mc_se] = post.mc_normalizer(100000, stream_key(ctx.seed, 0xe3));
    ctx.metrics["posterior"]["ks"] = ks_statistic(th, [&](double v) { return post.cdf(v); });
    ctx.metrics["posterior"]["reference"] = "a(theta)^2 inverse_gamma(N/2, S/2)";
    ctx.metrics["posterior"]["normalizer_quadrature"] = post.normalizer();
    ctx.metrics["posterior"]["normalizer_mc"] = mc;
    ctx.metrics["posterior"]["normalizer_mc_se"] = mc_se;
  }
}

inline void evaluate_posterior(const Probit& model, const Probit::Data& x, const RowMat& kept, RunContext& ctx,
                               ArtifactDir& out) {
  const auto& ev = ctx.cfg.evaluation;
  GridSpec gs;
  gs.n1 = gs.n2 = ev.grid_n;
  const ProbitJeffreysGrid grid(model, gs, {}, ctx.opt.threads);
  {
    std::ostringstream os;
    grid.write_csv(os);
    out.write("jeffreys_grid.csv", os.str());
  }
  ctx.metrics["jeffreys"]["grid_unconverged_nodes"] = grid.unconverged_nodes();
  ctx.metrics["jeffreys"]["grid_non_pd_nodes"] = grid.non_pd_nodes();
  ctx.metrics["jeffreys"]["grid_n"] = ev.grid_n;

  MHConfig mc = ctx.cfg.posterior.mh;
  mc.covariance.reset();
  mc.total_iters = ev.mh_theta_iters;
  mc.keep_last = ev.mh_theta_keep;
  auto log_prior = [&](const Vec& th) { return grid.log_density(th[0], th[1]) + probit_log_prior_extra(ctx, th); };
  const auto ref = mh_theta_reference(log_prior, model, x, grid.log_box(), mc, stream_key(ctx.seed, 0xe4));
  ctx.diagnostics["mh_theta_reference"] = mh_json(ref.diagnostics);
  out.write("reference_posterior.csv", matrix_csv(ref.theta));

  const RowMat a = thin_rows(kept, ev.compare_samples), b = thin_rows(ref.theta, ev.compare_samples);
  auto j = mmd_json(a, b, ev, stream_key(ctx.seed, 0xe5));
  j["reference"] = ctx.cfg.constraint ? "mh_theta(jeffreys_grid * a^(1/alpha))" : "mh_theta(jeffreys_grid)";
  j["reference_accept_kept"] = ref.diagnostics.accept_kept;
  if (!ctx.cfg.posterior.data.theta_true.empty())
    j["reference_mean_norm_error"] = mean_norm_error(ref.theta, to_vec(ctx.cfg.posterior.data.theta_true));
  ctx.metrics["posterior"].update(j);
}

inline Mat proposal_covariance(const PriorNetwork& net, const PosteriorConfig& pc) {
  if (pc.proposal == "structured") return structured_covariance(net, pc.rho);
  const auto p = static_cast<Eigen::Index>(net.latent_dim());
  return Mat::Identity(p, p);
}

template <StatModel Model>
RunOutput run_model(const Model& model, const ExperimentConfig& cfg, const RunOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  RunContext ctx{cfg, opt, cfg.divergence.spec(), cfg.seed};
  ArtifactDir out(cfg.output_dir);

  EstimatorConfig est = cfg.estimator;
  est.threads = std::max(1u, opt.threads);
  TrainConfig tc = cfg.optimizer.train_config();
  tc.verbose = opt.verbose;

  PriorNetwork net = cfg.network.build(stream_key(cfg.seed, 0x11));
  out.write_json("network_initial.json", net.to_json());
  std::vector<MITracePoint> mi_trace;
  std::vector<ConstraintTracePoint> ctrace;
  std::size_t clamped = 0, skipped = 0;

  if (cfg.constraint) {
    const auto& k = *cfg.constraint;
    PipelineConfig pc;
    pc.stage1 = tc;
    pc.stage3 = tc;
    if (k.stage1_epochs) pc.stage1.epochs = k.stage1_epochs;
    if (k.stage1_lr > 0.0) pc.stage1.adam.lr = k.stage1_lr;
    pc.stage3.constraint_samples = k.constraint_samples;
    pc.moment_samples = k.moment_samples;
    pc.exact_target = k.target;
    pc.skip_stage1 = k.skip_stage1;
    LagrangianState lag(1, k.eta_tilde0);
    lag.v = k.v;
    lag.M = k.M;
    lag.eta_tilde_max = k.eta_tilde_max;
    lag.period = k.period;
    pc.lagrangian = lag;
    const PriorNetwork net3 =
        cfg.network_constrained ? cfg.network_constrained->build(stream_key(cfg.seed, 0x11, 3)) : net;
    auto pr = constrained_pipeline(net, net3, model, ctx.div, est, k.a, pc, stream_key(cfg.seed, 0x22));
    json pj = {{"target", pr.target}, {"target_from_estimate", pr.target_from_estimate}};
    if (pr.unconstrained) {
      pj["K_hat"] = {{"value", pr.K_hat.value}, {"se", pr.K_hat.se}, {"max_share", pr.K_hat.max_share}};
      pj["c_hat"] = {{"value", pr.c_hat.value}, {"se", pr.c_hat.se}, {"max_share", pr.c_hat.max_share}};
      pj["ratio_hat"] = pr.c_hat.value / pr.K_hat.value;
      out.write_json("network_unconstrained.json", pr.unconstrained->net.to_json());
      out.write("mi_trace_unconstrained.csv", mi_trace_csv(pr.unconstrained->mi_trace));
      ctx.metrics["mi_unconstrained"] = mi_trace_json(pr.unconstrained->mi_trace, ctx.div);
      clamped += pr.unconstrained->clamped;
      skipped += pr.unconstrained->skipped;
    }
    net = pr.constrained.net;
    mi_trace = std::move(pr.constrained.mi_trace);
    ctrace = std::move(pr.constrained.constraint_trace);
    clamped += pr.constrained.clamped;
    skipped += pr.constrained.skipped;
    const auto fin = estimate_constraint(net, {Constraint{k.a, pr.target}}, cfg.evaluation.final_constraint_samples,
                                         stream_key(cfg.seed, 0xf1));
    pj["final_mean"] = fin.mean[0];
    pj["final_se"] = fin.se[0];
    pj["gap"] = std::abs(fin.value[0]);
    pj["tolerance"] = k.M;
    pj["within_tolerance"] = std::abs(fin.value[0]) <= k.M;
    if (pr.constrained.lagrangian) {
      pj["eta"] = pr.constrained.lagrangian->eta[0];
      pj["eta_tilde"] = pr.constrained.lagrangian->eta_tilde[0];
    }
    ctx.metrics["constraint"] = pj;
    out.write("constraint_trace.csv", constraint_trace_csv(ctrace));
  } else {
    auto tr = train(net, model, ctx.div, est, {}, tc, stream_key(cfg.seed, 0x22));
    net = std::move(tr.net);
    mi_trace = std::move(tr.mi_trace);
    clamped = tr.clamped;
    skipped = tr.skipped;
  }
  ctx.metrics["mi"] = mi_trace_json(mi_trace, ctx.div);
  ctx.diagnostics["training"] = {{"clamped_log_ratios", clamped}, {"skipped_theta_draws", skipped}};
  out.write("mi_trace.csv", mi_trace_csv(mi_trace));
  out.write_json("network.json", net.to_json());

  const RowMat prior = to_rowmat(net.sample_prior(cfg.evaluation.prior_samples, stream_key(cfg.seed, 0x33)));
  out.write("prior_samples.csv", matrix_csv(prior));
  ctx.metrics["prior"] = json::object();
  evaluate_prior(model, net, prior, ctx);

  std::size_t kept_rows = 0;
  if (cfg.posterior.enabled) {
    const auto x = acquire_data(model, ctx);
    out.write("data.csv", data_csv(x));
    MHConfig mc = cfg.posterior.mh;
    mc.covariance = proposal_covariance(net, cfg.posterior);
    const auto mh = mh_run(net, model, x, mc, stream_key(cfg.seed, 0x44));
    kept_rows = static_cast<std::size_t>(mh.theta.rows());
    {
      std::ostringstream os;
      os.precision(17);
      os << "iter,accepted";
      for (Eigen::Index j = 0; j < mh.theta.cols(); ++j) os << ",theta" << j + 1;
      os << "\n";
      const std::size_t burn = mc.total_iters - mc.keep_last;
      for (Eigen::Index i = 0; i < mh.theta.rows(); ++i) {
        const std::size_t it = burn + static_cast<std::size_t>(i);
        os << it + 1 << "," << static_cast<int>(mh.chain.accepted[it]);
        for (Eigen::Index j = 0; j < mh.theta.cols(); ++j) os << "," << mh.theta(i, j);
        os << "\n";
      }
      out.write("posterior_chain.csv", os.str());
    }
    ctx.diagnostics["mh"] = mh_json(mh.diagnostics);
    ctx.diagnostics["mh"]["proposal"] = cfg.posterior.proposal;
    json pj = {{"acceptance", mh.diagnostics.accept_kept},
               {"acceptance_burnin", mh.diagnostics.accept_burnin},
               {"kept_samples", kept_rows}};
    if (!mh.diagnostics.autocorr.empty()) {
      double worst = 0.0;
      for (const auto& c : mh.diagnostics.autocorr) worst = std::max(worst, std::isnan(c[2]) ? 1.0 : c[2]);
      pj["max_autocorr_lag10"] = worst;
    }
    if (!cfg.posterior.data.theta_true.empty())
      pj["mean_norm_error"] = mean_norm_error(mh.theta, to_vec(cfg.posterior.data.theta_true));
    ctx.metrics["posterior"] = pj;
    evaluate_posterior(model, x, mh.theta, ctx, out);
  }
  if constexpr (std::is_same_v<Model, Probit>) {
    if (cfg.posterior.enabled && cfg.posterior.data.source == "simulate")
      ctx.notes.push_back(
          "theta_true is pinned to the configured value; the reference experiment states only an approximate value");
  }

  ctx.metrics["experiment"] = cfg.name;
  ctx.metrics["model"] = cfg.model.kind;
  ctx.metrics["seed"] = cfg.seed;
  ctx.metrics["notes"] = ctx.notes;
  out.write_json("metrics.json", ctx.metrics);
  out.write_json("diagnostics.json", ctx.diagnostics);
  {
    std::ostringstream os;
    os << cfg.source_text;
    out.write("config.toml", os.str());
  }
  auto files = out.files();
  files.push_back("manifest.json");
  std::sort(files.begin(), files.end());
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  json manifest = {{"name", cfg.name},
                   {"seed", cfg.seed},
                   {"config_file", "config.toml"},
                   {"config", cfg.source_text},
                   {"rerun", "varp run config.toml"},
                   {"epochs", cfg.optimizer.epochs},
                   {"lambda_checksum", params_checksum(net.params())},
                   {"num_params", net.num_params()},
                   {"threads", est.threads},
                   {"files", files},
                   {"notes", ctx.notes},
                   {"wall_seconds", secs},
                   {"timestamp", utc_timestamp()}};
  if (kept_rows) manifest["kept_samples"] = kept_rows;
  out.write_json("manifest.json", manifest);
  out.commit();
  return {out.final_path(), ctx.metrics, ctx.diagnostics};
}

}  // namespace detail

inline RunOutput run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const auto& k = cfg.model.kind;
  if (k == "multinomial")
    return detail::run_model(detail::make_model(cfg.model, std::type_identity<Multinomial>{}), cfg, opt);
  if (k == "probit") return detail::run_model(detail::make_model(cfg.model, std::type_identity<Probit>{}), cfg, opt);
  if (k == "gaussvar")
    return detail::run_model(detail::make_model(cfg.model, std::type_identity<GaussVar>{}), cfg, opt);
  throw ConfigError("model.kind: unsupported '" + k + "'");
}

inline RunOutput run_config_file(const std::string& path, const RunOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_experiment(effective_config(ss.str(), opt, path), opt);
}

}  // namespace varp
