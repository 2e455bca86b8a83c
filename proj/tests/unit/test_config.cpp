#include "varp/reproduce.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace varp;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kMinimal = R"(
name = "mini"
[model]
kind = "gaussvar"
[network]
architecture = "single_layer"
p = 3
blocks = [{ activation = "exp", size = 1 }]
)";

std::string error_of(const std::string& text) {
  try {
    (void)parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string with(const std::vector<std::pair<std::string, TomlValue>>& kv) { return apply_overrides(kMinimal, kv); }

}  // namespace

TEST(Config, BuiltinConfigsParse) {
  for (const auto& [id, text] : builtin_configs()) {
    SCOPED_TRACE(id);
    const auto c = parse_config_text(text);
    EXPECT_EQ(c.network.output_dim(), c.model.dim());
    EXPECT_EQ(c.source_text, text);
  }
}

TEST(Config, ShippedFilesMatchBuiltins) {
  const fs::path dir = fs::path(VARP_SOURCE_DIR) / "configs";
  for (const auto& [id, text] : builtin_configs()) {
    SCOPED_TRACE(id);
    const fs::path p = dir / (id + ".toml");
    ASSERT_TRUE(fs::exists(p));
    EXPECT_EQ(slurp(p), text);
    EXPECT_EQ(load_config(p.string()).name, parse_config_text(text).name);
  }
}

TEST(Config, Defaults) {
  const auto c = parse_config_text(kMinimal);
  EXPECT_EQ(c.name, "mini");
  EXPECT_EQ(c.output_dir, "out/mini");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.estimator.N, 10u);
  EXPECT_EQ(c.estimator.T, 50u);
  EXPECT_EQ(c.estimator.U, 1000u);
  EXPECT_EQ(c.estimator.objective, Objective::LowerBound);
  EXPECT_TRUE(c.estimator.common_random_numbers);
  EXPECT_DOUBLE_EQ(c.divergence.alpha, 0.5);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.0025);
  EXPECT_DOUBLE_EQ(c.network.init_std, 0.05);
  EXPECT_FALSE(c.posterior.enabled);
  EXPECT_FALSE(c.constraint.has_value());
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(error_of(with({{"estimator.bogus", std::int64_t{1}}})), "estimator.bogus: unknown field");
  EXPECT_EQ(error_of(with({{"extra", true}})), "extra: unknown field");
  EXPECT_EQ(error_of("name = \"x\"\n"), "model: required section is missing");
  EXPECT_EQ(error_of(with({{"model.kind", std::string("poisson")}})).rfind("model.kind:", 0), 0u);
  EXPECT_EQ(error_of(with({{"estimator.T", std::string("many")}})), "estimator.T: expected an integer");
  EXPECT_EQ(error_of(with({{"estimator.U", std::int64_t{-4}}})), "estimator.U: expected a nonnegative integer");
  EXPECT_NE(error_of("[model\nkind=1").find("config:"), std::string::npos);
}

TEST(Config, NetworkValidation) {
  EXPECT_EQ(error_of(with({{"network.p", std::int64_t{0}}})), "network.p: must be >= 1");
  EXPECT_NE(error_of(with({{"network.architecture", std::string("deep")}})).find("network.architecture"),
            std::string::npos);
  EXPECT_NE(error_of(with({{"network.init_std", -1.0}})).find("network.init_std"), std::string::npos);
  std::string two = kMinimal;
  two.replace(two.find("size = 1"), 8, "size = 2");
  EXPECT_NE(error_of(two).find("does not match the model dimension"), std::string::npos);
  std::string act = kMinimal;
  act.replace(act.find("\"exp\""), 5, "\"tanh\"");
  EXPECT_EQ(error_of(act).rfind("network.blocks[0].activation", 0), 0u);
}

TEST(Config, CrossFieldRules) {
  EXPECT_NE(error_of(with({{"divergence.alpha", 1.5}})).find("divergence.alpha"), std::string::npos);
  EXPECT_NE(error_of(with({{"divergence.stabilized", false}})).find("lower bound"), std::string::npos);
  EXPECT_EQ(error_of(with({{"divergence.stabilized", false}, {"estimator.objective", std::string("full_mi")}})), "");
  EXPECT_EQ(error_of(with({{"optimizer.monitor_every", std::int64_t{0}}})), "optimizer.monitor_every: must be >= 1");
  EXPECT_NE(error_of(with({{"posterior.enabled", true}})).find("posterior.data"), std::string::npos);
  EXPECT_NE(error_of(with({{"posterior.data.theta_true", std::vector<double>{1.0, 2.0}}})).find("theta_true"),
            std::string::npos);
  EXPECT_NE(error_of(with({{"posterior.data.theta_true", std::vector<double>{1.0}}, {"posterior.keep_last", std::int64_t{10}},
                           {"posterior.total_iters", std::int64_t{5}}}))
                .find("posterior"),
            std::string::npos);
  EXPECT_NE(error_of(with({{"posterior.rho", 0.0}, {"posterior.data.theta_true", std::vector<double>{1.0}}})),
            "");
}

TEST(Config, ConstraintSection) {
  const auto c = parse_config_text(with({{"constraint.kind", std::string("rational")},
                                        {"constraint.beta", 1.0},
                                        {"constraint.tau", 2.0}}));
  ASSERT_TRUE(c.constraint);
  EXPECT_FALSE(c.constraint->target);
  EXPECT_EQ(c.constraint->period, 100u);
  EXPECT_DOUBLE_EQ(c.constraint->M, 0.005);
  EXPECT_NE(error_of(with({{"constraint.kind", std::string("moment")}})).find("constraint.kappa"), std::string::npos);
  EXPECT_NE(error_of(with({{"constraint.kind", std::string("moment")}, {"constraint.kappa", 1.0},
                           {"constraint.skip_stage1", true}}))
                .find("constraint.skip_stage1"),
            std::string::npos);
  EXPECT_NE(error_of(with({{"constraint.kind", std::string("moment")}, {"constraint.kappa", 1.0},
                           {"constraint.component", std::int64_t{1}}}))
                .find("constraint.component"),
            std::string::npos);
  EXPECT_NE(error_of(with({{"divergence.kind", std::string("kl")}, {"constraint.kind", std::string("moment")},
                           {"constraint.kappa", 1.0}}))
                .find("constraint"),
            std::string::npos);
}

TEST(Config, ProbitHasNoExactMle) {
  std::string t = builtin_configs().at("probit");
  EXPECT_NE(error_of(apply_overrides(t, {{"estimator.mle", std::string("exact")}})).find("estimator.mle"),
            std::string::npos);
}

TEST(Overrides, SetNestedKeysAndRoundTrip) {
  const auto text = apply_overrides(kMinimal, {{"optimizer.epochs", std::int64_t{7}}, {"evaluation.grid_n", std::int64_t{4}}});
  const auto c = parse_config_text(text);
  EXPECT_EQ(c.optimizer.epochs, 7u);
  EXPECT_EQ(c.evaluation.grid_n, 4u);
  EXPECT_THROW(apply_overrides(kMinimal, {{"name.x", true}}), ConfigError);
}

TEST(Overrides, EffectiveConfigAppliesOptions) {
  RunOptions opt;
  opt.seed = 99;
  opt.out = "/tmp/x";
  opt.quick = true;
  const auto base = parse_config_text(builtin_configs().at("gaussvar"));
  const auto c = effective_config(builtin_configs().at("gaussvar"), opt);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.output_dir, "/tmp/x");
  EXPECT_LE(c.optimizer.epochs, 150u);
  EXPECT_LE(c.estimator.U, 100u);
  EXPECT_EQ(c.divergence.alpha, base.divergence.alpha);
  // the effective TOML reproduces itself
  EXPECT_EQ(parse_config_text(c.source_text).optimizer.epochs, c.optimizer.epochs);
  RunOptions big;
  big.seed = std::numeric_limits<std::uint64_t>::max();
  EXPECT_THROW(effective_config(kMinimal, big), ConfigError);
}
