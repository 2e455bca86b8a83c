#pragma once

// Named experiment reproductions and plot-data export.

#include "varp/runner.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace varp {

// ---------------------------------------------------------------- builtin configs

namespace builtin {

inline constexpr const char* kMultinomial = R"(name = "multinomial_posterior"
seed = 1
output_dir = "out/multinomial_posterior"

[model]
kind = "multinomial"
n = 10
q = 4

[network]
architecture = "single_layer"
p = 50
blocks = [{ activation = "softmax", size = 4 }]

[divergence]
kind = "alpha"
alpha = 0.5

[estimator]
N = 10
T = 50
U = 1000
n_outer = 200
n_theta = 50
objective = "lower_bound"

[optimizer]
lr = 0.0025
epochs = 2000
monitor_every = 20

[posterior]
total_iters = 100000
keep_last = 50000
proposal = "structured"
rho = 0.1

[posterior.data]
source = "simulate"
theta_true = [0.25, 0.25, 0.25, 0.25]
N = 10
seed = 7

[evaluation]
prior_samples = 20000
reference_samples = 20000
null_permutations = 20
null_rows = 2000
)";

inline constexpr const char* kGaussVar = R"(name = "gaussvar"
seed = 1
output_dir = "out/gaussvar"

[model]
kind = "gaussvar"
mu = 0.0

[network]
architecture = "single_layer"
p = 10
blocks = [{ activation = "softplus", size = 1 }]

[divergence]
kind = "alpha"
alpha = 0.5

[estimator]
N = 10
T = 50
U = 1000
n_outer = 200
n_theta = 50
objective = "lower_bound"

[optimizer]
lr = 0.025
epochs = 3000
monitor_every = 20

[posterior]
total_iters = 100000
keep_last = 50000
proposal = "identity"

[posterior.data]
source = "simulate"
theta_true = [1.0]
N = 10
seed = 3

[evaluation]
prior_samples = 100000
)";

inline constexpr const char* kGaussVarConstrained = R"(name = "gaussvar_constrained"
seed = 1
output_dir = "out/gaussvar_constrained"

[model]
kind = "gaussvar"
mu = 0.0

[network]
architecture = "single_layer"
p = 10
blocks = [{ activation = "softplus", size = 1 }]

[network_constrained]
architecture = "single_layer"
p = 10
blocks = [{ activation = "exp", size = 1 }]

[divergence]
kind = "alpha"
alpha = 0.5

[estimator]
N = 10
T = 50
U = 1000
n_outer = 200
n_theta = 50
objective = "lower_bound"

[optimizer]
lr = 0.0005
epochs = 3000
monitor_every = 20

[constraint]
kind = "rational"
beta = -1.0
tau = 1.0
target = 0.39269908169872414
stage1_epochs = 1000
stage1_lr = 0.025
moment_samples = 100000
constraint_samples = 10000
period = 100

[posterior]
total_iters = 100000
keep_last = 50000
proposal = "identity"

[posterior.data]
source = "simulate"
theta_true = [1.0]
N = 10
seed = 3

[evaluation]
prior_samples = 100000
final_constraint_samples = 100000
)";

inline constexpr const char* kProbit = R"(name = "probit_unconstrained"
seed = 1
output_dir = "out/probit_unconstrained"

[model]
kind = "probit"
mu_a = 0.0
sigma2_a = 1.0

[network]
architecture = "single_layer"
p = 50
blocks = [{ activation = "exp", size = 1 }, { activation = "softplus", size = 1 }]

[divergence]
kind = "alpha"
alpha = 0.5

[estimator]
N = 100
T = 50
U = 100
n_outer = 100
n_theta = 50
objective = "lower_bound"

[optimizer]
lr = 0.001
epochs = 1500
monitor_every = 25

[posterior]
total_iters = 50000
keep_last = 25000
proposal = "identity"

[posterior.data]
source = "simulate"
theta_true = [3.37, 0.43]
N = 50
seed = 11
require_non_degenerate = true

[evaluation]
prior_samples = 20000
compare_samples = 5000
grid_n = 200
mh_theta_iters = 50000
mh_theta_keep = 25000
)";

inline constexpr const char* kProbitConstrained = R"(name = "probit_constrained"
seed = 1
output_dir = "out/probit_constrained"

[model]
kind = "probit"
mu_a = 0.0
sigma2_a = 1.0

[network]
architecture = "single_layer"
p = 50
blocks = [{ activation = "exp", size = 1 }, { activation = "softplus", size = 1 }]

[divergence]
kind = "alpha"
alpha = 0.5

[estimator]
N = 100
T = 50
U = 100
n_outer = 100
n_theta = 50
objective = "lower_bound"

[optimizer]
lr = 0.0005
epochs = 1500
monitor_every = 25

[constraint]
kind = "moment"
component = 1
kappa = 0.125
stage1_epochs = 1500
stage1_lr = 0.001
moment_samples = 100000
constraint_samples = 10000
period = 100

[posterior]
total_iters = 50000
keep_last = 25000
proposal = "identity"

[posterior.data]
source = "simulate"
theta_true = [3.37, 0.43]
N = 50
seed = 11
require_non_degenerate = true

[evaluation]
prior_samples = 20000
compare_samples = 5000
grid_n = 200
mh_theta_iters = 50000
mh_theta_keep = 25000
final_constraint_samples = 100000
)";

}  // namespace builtin

// Config shipped for each single-run experiment, also mirrored under configs/.
inline const std::map<std::string, std::string>& builtin_configs() {
  static const std::map<std::string, std::string> m = {
      {"multinomial", builtin::kMultinomial},
      {"gaussvar", builtin::kGaussVar},
      {"gaussvar_constrained", builtin::kGaussVarConstrained},
      {"probit", builtin::kProbit},
      {"probit_constrained", builtin::kProbitConstrained},
  };
  return m;
}

inline const std::vector<std::string>& reproduce_ids() {
  static const std::vector<std::string> ids = {"multinomial_prior", "multinomial_posterior", "probit_unconstrained",
                                               "probit_constrained", "gaussvar", "gaussvar_constrained",
                                               "alpha_sweep", "latent_dim_sweep", "seed_ecdf", "mean_norm_curve"};
  return ids;
}

struct ReproduceResult {
  fs::path dir;
  json report;
};

namespace detail {

struct Report {
  json checks = json::array();
  void check(const std::string& name, double value, const std::string& op, double threshold) {
    const bool pass = op == "<=" ? value <= threshold : op == ">=" ? value >= threshold : false;
    checks.push_back({{"name", name}, {"value", value}, {"op", op}, {"threshold", threshold}, {"pass", pass}});
  }
  void range(const std::string& name, double value, double lo, double hi) {
    checks.push_back(
        {{"name", name}, {"value", value}, {"range", {lo, hi}}, {"pass", value >= lo && value <= hi}});
  }
  void flag(const std::string& name, bool ok) { checks.push_back({{"name", name}, {"pass", ok}}); }
};

inline double num(const json& j, const json::json_pointer& p) {
  if (!j.contains(p) || !j.at(p).is_number()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(p).get<double>();
}

inline void common_checks(Report& r, const json& m) {
  if (m.contains("mi") && m["mi"].contains("within_bounds"))
    r.flag("mi_within_divergence_bounds", m["mi"]["within_bounds"].get<bool>());
  if (m.contains("posterior") && m["posterior"].contains("acceptance"))
    r.range("mh_acceptance_kept", num(m, "/posterior/acceptance"_json_pointer), 0.25, 0.55);
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing artifact " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("csv column '" + name + "' not found");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline CsvTable read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing artifact " + p.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty artifact " + p.string());
  t.header = split_csv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& c : split_csv(line)) row.push_back(std::stod(c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// theta columns of a CSV as a matrix.
inline RowMat theta_columns(const CsvTable& t) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j].rfind("theta", 0) == 0) cols.push_back(j);
  RowMat m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][cols[j]];
  return m;
}

inline RunOutput run_variant(const std::string& text, const std::vector<std::pair<std::string, TomlValue>>& kv,
                             const fs::path& dir, const RunOptions& opt) {
  RunOptions o = opt;
  o.out = dir.string();
  return run_experiment(effective_config(apply_overrides(text, kv), o), o);
}

inline std::string fmt_short(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline json single_run(const std::string& id, const fs::path& root, const RunOptions& opt) {
  std::string text;
  std::vector<std::pair<std::string, TomlValue>> kv = {{"name", id}};
  if (id == "multinomial_prior") {
    text = builtin::kMultinomial;
    kv.emplace_back("posterior.enabled", false);
  } else if (id == "multinomial_posterior") {
    text = builtin::kMultinomial;
  } else if (id == "probit_unconstrained") {
    text = builtin::kProbit;
  } else if (id == "probit_constrained") {
    text = builtin::kProbitConstrained;
  } else if (id == "gaussvar") {
    text = builtin::kGaussVar;
  } else if (id == "gaussvar_constrained") {
    text = builtin::kGaussVarConstrained;
  }
  const auto res = run_variant(text, kv, root / "run", opt);
  const json& m = res.metrics;
  Report r;
  common_checks(r, m);
  if (id == "multinomial_prior") r.check("prior_mmd2_vs_dirichlet_half", num(m, "/prior/mmd2"_json_pointer), "<=", 0.25);
  if (id == "multinomial_posterior") {
    r.check("prior_mmd2_vs_dirichlet_half", num(m, "/prior/mmd2"_json_pointer), "<=", 0.25);
    r.check("posterior_mmd2_vs_dirichlet_gamma", num(m, "/posterior/mmd2"_json_pointer), "<=", 1e-2);
  }
  if (id == "gaussvar") {
    r.check("posterior_ks_vs_inverse_gamma", num(m, "/posterior/ks"_json_pointer), "<=", 0.05);
    r.check("posterior_autocorr_lag10", num(m, "/posterior/max_autocorr_lag10"_json_pointer), "<=", 0.5);
  }
  if (id == "gaussvar_constrained") {
    r.check("constraint_gap", num(m, "/constraint/gap"_json_pointer), "<=", 0.005);
    r.check("prior_ks_vs_target", num(m, "/prior/ks"_json_pointer), "<=", 0.05);
    r.check("posterior_ks_vs_target", num(m, "/posterior/ks"_json_pointer), "<=", 0.05);
    if (m["constraint"].contains("K_hat")) {
      const double K = num(m, "/constraint/K_hat/value"_json_pointer), Kse = num(m, "/constraint/K_hat/se"_json_pointer);
      const double c = num(m, "/constraint/c_hat/value"_json_pointer), cse = num(m, "/constraint/c_hat/se"_json_pointer);
      r.check("K_hat_z_score_vs_one_half", std::abs(K - 0.5) / Kse, "<=", 3.0);
      r.check("c_hat_z_score_vs_pi_over_16", std::abs(c - kPi / 16.0) / cse, "<=", 3.0);
    }
  }
  if (id == "probit_unconstrained" || id == "probit_constrained") {
    r.check("jeffreys_slope_small_theta2_error", std::abs(num(m, "/jeffreys/slope_small_theta2"_json_pointer) + 1.0),
            "<=", 0.1);
    r.check("jeffreys_slope_large_theta2_error", std::abs(num(m, "/jeffreys/slope_large_theta2"_json_pointer) + 3.0),
            "<=", 0.1);
    r.check("posterior_mmd2_vs_mh_theta_reference", num(m, "/posterior/mmd2"_json_pointer), "<=", 1e-2);
    r.range("reference_mh_acceptance", num(m, "/posterior/reference_accept_kept"_json_pointer), 0.25, 0.55);
  }
  if (id == "probit_constrained") r.check("constraint_gap", num(m, "/constraint/gap"_json_pointer), "<=", 0.005);
  return {{"id", id}, {"run_dir", (root / "run").string()}, {"checks", r.checks}, {"metrics", m}};
}

inline json alpha_sweep(const fs::path& root, const RunOptions& opt) {
  std::ostringstream table;
  table.precision(17);
  table << "alpha,prior_mmd2,prior_null_scale,posterior_mmd2,posterior_null_scale,final_mi\n";
  json rows = json::array();
  for (double a : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    const auto res = run_variant(builtin::kMultinomial, {{"name", "alpha_" + fmt_short(a)}, {"divergence.alpha", a}},
                                 root / ("alpha_" + fmt_short(a)), opt);
    const json& m = res.metrics;
    table << a << "," << num(m, "/prior/mmd2"_json_pointer) << "," << num(m, "/prior/mmd2_null_scale"_json_pointer)
          << "," << num(m, "/posterior/mmd2"_json_pointer) << ","
          << num(m, "/posterior/mmd2_null_scale"_json_pointer) << "," << num(m, "/mi/final/mean"_json_pointer)
          << "\n";
    rows.push_back({{"alpha", a}, {"prior_mmd2", m["prior"]["mmd2"]}, {"posterior_mmd2", m["posterior"]["mmd2"]}});
  }
  write_text(root / "alpha_sweep.csv", table.str());
  return {{"id", "alpha_sweep"}, {"table", "alpha_sweep.csv"}, {"rows", rows}, {"checks", json::array()}};
}

inline json latent_dim_sweep(const fs::path& root, const RunOptions& opt) {
  std::ostringstream table;
  table.precision(17);
  table << "p,layers,prior_mmd2,prior_null_scale,posterior_mmd2,posterior_null_scale\n";
  json rows = json::array();
  for (int layers : {1, 2})
    for (std::int64_t p : {25, 50, 75, 100, 200}) {
      const std::string tag = "p" + std::to_string(p) + "_l" + std::to_string(layers);
      const auto res =
          run_variant(builtin::kMultinomial,
                      {{"name", tag},
                       {"network.p", p},
                       {"network.architecture", std::string(layers == 1 ? "single_layer" : "two_layer_prelu")},
                       {"network.hidden_dim", std::int64_t{10}}},
                      root / tag, opt);
      const json& m = res.metrics;
      table << p << "," << layers << "," << num(m, "/prior/mmd2"_json_pointer) << ","
            << num(m, "/prior/mmd2_null_scale"_json_pointer) << "," << num(m, "/posterior/mmd2"_json_pointer) << ","
            << num(m, "/posterior/mmd2_null_scale"_json_pointer) << "\n";
      rows.push_back({{"p", p}, {"layers", layers}, {"prior_mmd2", m["prior"]["mmd2"]},
                      {"posterior_mmd2", m["posterior"]["mmd2"]}});
    }
  write_text(root / "latent_dim_sweep.csv", table.str());
  return {{"id", "latent_dim_sweep"}, {"table", "latent_dim_sweep.csv"}, {"rows", rows}, {"checks", json::array()}};
}

// One trained probit prior and dataset; the MH(eps) chain is rerun under
// `n_seeds` seeds and the per-component ECDF band is compared with the
// MH(theta) reference posterior.
inline json seed_ecdf(const fs::path& root, const RunOptions& opt, std::size_t n_seeds = 100) {
  const auto base = run_variant(builtin::kProbit, {{"name", "seed_ecdf_base"}}, root / "base", opt);
  const ExperimentConfig cfg = load_config((base.dir / "config.toml").string());
  const PriorNetwork net = PriorNetwork::from_json(json::parse(read_text(base.dir / "network.json")));
  const Probit model(cfg.model.mu_a, cfg.model.sigma2_a);
  const auto x = read_dataset(model, (base.dir / "data.csv").string());
  const RowMat ref = theta_columns(read_csv(base.dir / "reference_posterior.csv"));
  if (opt.quick) n_seeds = std::min<std::size_t>(n_seeds, 10);

  std::vector<RowMat> samples(n_seeds);
  std::vector<double> accept(n_seeds);
  MHConfig mc = cfg.posterior.mh;
  mc.covariance = detail::proposal_covariance(net, cfg.posterior);
  parallel_for(n_seeds, opt.threads, [&](std::size_t s) {
    const auto mh = mh_run(net, model, x, mc, stream_key(cfg.seed, 0x5eed, s));
    samples[s] = thin_rows(mh.theta, cfg.evaluation.compare_samples);
    accept[s] = mh.diagnostics.accept_kept;
  });

  std::ostringstream os;
  os.precision(17);
  os << "component,theta,lo,hi,reference\n";
  json coverage = json::array();
  for (Eigen::Index j = 0; j < ref.cols(); ++j) {
    std::vector<EcdfCurve> curves;
    for (const auto& s : samples) curves.push_back(ecdf(column(s, j)));
    auto rc = ecdf(column(ref, j));
    const double lo = rc.support[rc.support.size() / 1000], hi = rc.support[rc.support.size() - 1 - rc.support.size() / 1000];
    std::vector<double> grid(200);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = lo + (hi - lo) * static_cast<double>(i) / 199.0;
    const auto env = ecdf_envelope(curves, grid);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double r = rc(grid[i]);
      inside += r >= env.lo[i] && r <= env.hi[i];
      os << j + 1 << "," << grid[i] << "," << env.lo[i] << "," << env.hi[i] << "," << r << "\n";
    }
    coverage.push_back(static_cast<double>(inside) / static_cast<double>(grid.size()));
  }
  write_text(root / "ecdf_envelope.csv", os.str());
  Report r;
  for (std::size_t s = 0; s < n_seeds; ++s) r.range("mh_acceptance_seed_" + std::to_string(s), accept[s], 0.25, 0.55);
  return {{"id", "seed_ecdf"},
          {"seeds", n_seeds},
          {"table", "ecdf_envelope.csv"},
          {"reference_inside_band_fraction", coverage},
          {"checks", r.checks}};
}

// One trained GaussVar prior; 10 datasets per N, posterior mean norm
// error of the fitted and of the exact Jeffreys posterior.
inline json mean_norm_curve(const fs::path& root, const RunOptions& opt) {
  const auto base = run_variant(builtin::kGaussVar, {{"name", "mean_norm_base"}}, root / "base", opt);
  const ExperimentConfig cfg = load_config((base.dir / "config.toml").string());
  const PriorNetwork net = PriorNetwork::from_json(json::parse(read_text(base.dir / "network.json")));
  const GaussVar model(cfg.model.mu);
  const Vec truth = to_vec(cfg.posterior.data.theta_true);
  const std::vector<std::size_t> Ns = {5, 10, 20, 50, 100};
  const std::size_t n_data = 10;
  MHConfig mc = cfg.posterior.mh;
  std::vector<double> fitted(Ns.size() * n_data), jeff(Ns.size() * n_data);
  parallel_for(Ns.size() * n_data, opt.threads, [&](std::size_t k) {
    const std::size_t N = Ns[k / n_data], d = k % n_data;
    const auto x = sample_data(model, as_span(truth), N, stream_key(cfg.seed, 0xd47a, N, d));
    const auto mh = mh_run(net, model, x, mc, stream_key(cfg.seed, 0x3c3c, N, d));
    fitted[k] = mean_norm_error(mh.theta, truth);
    const auto ig = reference::inverse_gamma_sample(0.5 * static_cast<double>(N), 0.5 * x.ss, mc.keep_last,
                                                    stream_key(cfg.seed, 0x1616, N, d));
    RowMat igm(static_cast<Eigen::Index>(ig.size()), 1);
    for (std::size_t i = 0; i < ig.size(); ++i) igm(static_cast<Eigen::Index>(i), 0) = ig[i];
    jeff[k] = mean_norm_error(igm, truth);
  });
  std::ostringstream raw, summary;
  raw.precision(17);
  summary.precision(17);
  raw << "N,dataset,fitted,jeffreys\n";
  summary << "N,fitted_mean,fitted_lo95,fitted_hi95,jeffreys_mean,jeffreys_lo95,jeffreys_hi95\n";
  std::vector<double> means;
  for (std::size_t n = 0; n < Ns.size(); ++n) {
    auto stats = [&](const std::vector<double>& v) {
      double s = 0.0, sq = 0.0;
      for (std::size_t d = 0; d < n_data; ++d) {
        s += v[n * n_data + d];
        sq += v[n * n_data + d] * v[n * n_data + d];
      }
      const double m = s / static_cast<double>(n_data);
      const double se = std::sqrt(std::max(0.0, sq / static_cast<double>(n_data) - m * m) / (n_data - 1.0));
      return std::array<double, 3>{m, m - 1.96 * se, m + 1.96 * se};
    };
    for (std::size_t d = 0; d < n_data; ++d)
      raw << Ns[n] << "," << d << "," << fitted[n * n_data + d] << "," << jeff[n * n_data + d] << "\n";
    const auto f = stats(fitted), j = stats(jeff);
    means.push_back(f[0]);
    summary << Ns[n] << "," << f[0] << "," << f[1] << "," << f[2] << "," << j[0] << "," << j[1] << "," << j[2] << "\n";
  }
  write_text(root / "mean_norm.csv", raw.str());
  write_text(root / "mean_norm_summary.csv", summary.str());
  Report r;
  r.check("fitted_error_mean_change_N5_to_N100", means.back() - means.front(), "<=", 0.0);
  return {{"id", "mean_norm_curve"}, {"table", "mean_norm_summary.csv"}, {"fitted_means", means}, {"checks", r.checks}};
}

}  // namespace detail

inline ReproduceResult reproduce(const std::string& id, const RunOptions& opt = {}) {
  const auto& ids = reproduce_ids();
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) throw ConfigError("unknown experiment id '" + id + "'");
  const fs::path root = opt.out ? fs::path(*opt.out) : fs::path("out") / id;
  fs::create_directories(root);
  RunOptions inner = opt;
  inner.out.reset();
  json report;
  if (id == "alpha_sweep") report = detail::alpha_sweep(root, inner);
  else if (id == "latent_dim_sweep") report = detail::latent_dim_sweep(root, inner);
  else if (id == "seed_ecdf") report = detail::seed_ecdf(root, inner);
  else if (id == "mean_norm_curve") report = detail::mean_norm_curve(root, inner);
  else report = detail::single_run(id, root, inner);
  report["quick"] = opt.quick;
  bool all = true;
  for (const auto& c : report["checks"]) all = all && c["pass"].get<bool>();
  report["all_checks_pass"] = all;
  detail::write_text(root / "report.json", report.dump(2) + "\n");
  return {root, report};
}

// ---------------------------------------------------------------- plot data

inline const std::vector<std::string>& plot_figure_ids() {
  static const std::vector<std::string> ids = {"mi_trace", "prior_hist", "posterior_hist",
                                               "ecdf",     "scatter",    "constraint_trace"};
  return ids;
}

// Writes <dir>/plot_data/<figure>.csv in long (one observation per row)
// form and returns its path.
inline fs::path emit_plot_data(const fs::path& dir, const std::string& figure) {
  using detail::read_csv;
  const auto& ids = plot_figure_ids();
  if (std::find(ids.begin(), ids.end(), figure) == ids.end()) throw ConfigError("unknown figure id '" + figure + "'");
  if (!fs::exists(dir / "manifest.json")) throw std::runtime_error(dir.string() + " is not an artifact directory");
  const fs::path outdir = dir / "plot_data";
  fs::create_directories(outdir);
  const fs::path target = outdir / (figure + ".csv");
  std::ostringstream os;
  os.precision(17);

  auto long_form = [&](const std::string& source, const RowMat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) os << source << "," << i << "," << j + 1 << "," << m(i, j) << "\n";
  };

  if (figure == "mi_trace") {
    os << detail::read_text(dir / "mi_trace.csv");
  } else if (figure == "constraint_trace") {
    os << detail::read_text(dir / "constraint_trace.csv");
  } else if (figure == "prior_hist") {
    const RowMat fitted = detail::theta_columns(read_csv(dir / "prior_samples.csv"));
    const auto init = PriorNetwork::from_json(json::parse(detail::read_text(dir / "network_initial.json")));
    const RowMat initial = init.sample_prior(static_cast<std::size_t>(fitted.rows()), 0x1417);
    os << "source,sample,component,value\n";
    long_form("initial", initial);
    long_form("fitted", fitted);
  } else if (figure == "posterior_hist") {
    os << "source,sample,component,value\n";
    long_form("fitted", detail::theta_columns(read_csv(dir / "posterior_chain.csv")));
    if (fs::exists(dir / "reference_posterior.csv"))
      long_form("reference", detail::theta_columns(read_csv(dir / "reference_posterior.csv")));
  } else if (figure == "ecdf") {
    os << "source,component,value,cdf\n";
    auto curve = [&](const std::string& source, const RowMat& m) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const auto c = ecdf(column(m, j));
        const double n = static_cast<double>(c.support.size());
        for (std::size_t i = 0; i < c.support.size(); ++i)
          os << source << "," << j + 1 << "," << c.support[i] << "," << static_cast<double>(i + 1) / n << "\n";
      }
    };
    curve("fitted", detail::theta_columns(read_csv(dir / "posterior_chain.csv")));
    if (fs::exists(dir / "reference_posterior.csv"))
      curve("reference", detail::theta_columns(read_csv(dir / "reference_posterior.csv")));
  } else if (figure == "scatter") {
    os << detail::matrix_csv(detail::theta_columns(read_csv(dir / "posterior_chain.csv")));
  }
  detail::write_text(target, os.str());
  return target;
}

}  // namespace varp
