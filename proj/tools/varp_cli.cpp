// varp: command-line front end for the experiment runner.

#include "varp/reproduce.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// --seed wins over VARP_SEED, which wins over the config file.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("VARP_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw varp::ConfigError(std::string("VARP_SEED: not an unsigned integer: '") + env + "'");
    }
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational approximation of reference priors: experiment runner"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
  bool quick = false, verbose = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Master RNG seed (overrides VARP_SEED and the config)");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--threads", threads, "Worker threads; results do not depend on this")->check(CLI::Range(1u, 256u));
    sub->add_flag("-v,--verbose", verbose, "Progress on stderr");
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Train, sample and evaluate one experiment config");
  run->add_option("config", config_path, "TOML experiment config")->required();
  add_common(run);
  run->add_flag("--quick", quick, "Reduced budgets for a smoke run");

  std::string experiment;
  auto* rep = app.add_subcommand("reproduce", "Run a named experiment with its pinned config");
  rep->add_option("id", experiment, "Experiment id")->required();
  add_common(rep);
  rep->add_flag("--quick", quick, "Reduced budgets for a smoke run");

  std::string artifact_dir, figure;
  auto* plot = app.add_subcommand("emit-plot-data", "Write tidy CSVs for a figure from an artifact directory");
  plot->add_option("dir", artifact_dir, "Artifact directory")->required();
  plot->add_option("figure", figure, "Figure id")->required();

  auto* val = app.add_subcommand("validate-config", "Parse and check a config without running it");
  val->add_option("config", config_path, "TOML experiment config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    varp::RunOptions opt;
    opt.seed = resolve_seed(seed);
    if (!out.empty()) opt.out = out;
    opt.threads = threads;
    opt.quick = quick;
    opt.verbose = verbose;

    if (*run) {
      const auto res = varp::run_config_file(config_path, opt);
      std::cout << res.dir.string() << "\n";
    } else if (*rep) {
      const auto res = varp::reproduce(experiment, opt);
      std::cout << res.dir.string() << "\n";
      for (const auto& c : res.report["checks"])
        std::cout << (c["pass"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>() << "\n";
    } else if (*plot) {
      std::cout << varp::emit_plot_data(artifact_dir, figure).string() << "\n";
    } else if (*val) {
      const auto cfg = varp::load_config(config_path);
      std::cout << "ok: " << cfg.name << " (" << cfg.model.kind << ", " << "q=" << cfg.model.dim() << (cfg.constraint ? ", constrained" : "") << ")\n";
    }
  } catch (const varp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
