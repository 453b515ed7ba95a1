#include "jana/config.hpp"
#include "jana/dataset.hpp"
#include "jana/training.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using jana::RunConfig;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(JANA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "jana_cli_capture.txt";
    const std::string cmd = std::string(JANA_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    if (std::system(cmd.c_str()) == -1) return {};
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("jana_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const RunConfig c = RunConfig::parse("{}");
    EXPECT_EQ(c.model.name, "gaussian_linear");
    EXPECT_EQ(c.training.budget, 10000u);
    EXPECT_EQ(c.training.epochs, 50u);
    EXPECT_EQ(c.training.batch_size, 64u);
    EXPECT_DOUBLE_EQ(c.training.initial_lr, 1e-3);
    EXPECT_FALSE(c.architecture.summary.kind.has_value());
}

TEST(Config, ReadsEverySection) {
    const RunConfig c = RunConfig::parse(R"({
        "model": {"name": "gaussian_iid", "size": 12, "constants": {"noise_sd": 2.0}},
        "training": {"budget": 500, "epochs": 4, "batch_size": 32, "regime": "online", "seed": 9},
        "architecture": {"posterior": {"n_couplings": 3, "latent": "student_t"},
                         "summary": {"kind": "deep_set", "summary_dim": 4}},
        "diagnostics": {"n_datasets": 50, "n_draws": 20, "level": 0.9},
        "estimation": {"n_draws": 30, "critic_quantile": 0.05},
        "paths": {"dataset": "a", "checkpoint": "b", "reports": "c"}})");
    EXPECT_EQ(c.model.size, 12u);
    EXPECT_DOUBLE_EQ(c.model.constants.at("noise_sd"), 2.0);
    EXPECT_EQ(c.training.regime, jana::Regime::online);
    EXPECT_EQ(c.architecture.posterior.n_couplings, 3u);
    EXPECT_EQ(c.architecture.posterior.latent, jana::LatentKind::student_t);
    EXPECT_EQ(c.architecture.summary.kind, jana::SummaryNetwork::Kind::deep_set);
    EXPECT_DOUBLE_EQ(c.diagnostics.level, 0.9);
    EXPECT_DOUBLE_EQ(c.estimation.critic_quantile, 0.05);
    EXPECT_EQ(c.paths.reports, "c");
    EXPECT_EQ(RunConfig::parse(c.to_json()).to_json(), c.to_json());
}

TEST(Config, RejectsUnknownKeysWrongTypesAndBadValues) {
    EXPECT_THROW(RunConfig::parse(R"({"trainig": {}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"training": {"epoch": 3}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"architecture": {"summary": {"width": 3}}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"training": {"epochs": "many"}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"training": {"regime": "sometimes"}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"model": {"name": "nope"}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"model": {"constants": {"nope": 1}}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"diagnostics": {"level": 1.5}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse(R"({"training": {"batch_size": 64, "budget": 10}})"), jana::ConfigError);
    EXPECT_THROW(RunConfig::parse("{"), jana::ConfigError);
}

TEST(Config, HashIgnoresPathsOnly) {
    const RunConfig a = RunConfig::parse(R"({"paths": {"dataset": "x"}})");
    const RunConfig b = RunConfig::parse(R"({"paths": {"dataset": "y"}})");
    const RunConfig c = RunConfig::parse(R"({"training": {"seed": 1}})");
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), c.hash());
    EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, EnvironmentOverridesPaths) {
    RunConfig c = RunConfig::parse(R"({"paths": {"dataset": "x", "checkpoint": "y"}})");
    ::setenv("JANA_DATASET", "from_env", 1);
    c.apply_env_overrides();
    ::unsetenv("JANA_DATASET");
    EXPECT_EQ(c.paths.dataset, "from_env");
    EXPECT_EQ(c.paths.checkpoint, "y");
}

TEST(Cli, HelpPrintsSchemaAndVersion) {
    const std::string help = capture("--help");
    EXPECT_NE(help.find("unknown keys are rejected"), std::string::npos);
    EXPECT_NE(help.find("\"batch_size\""), std::string::npos);
    EXPECT_EQ(capture("--format-version"), std::to_string(jana::kFormatVersion) + "\n");
    EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, ExitCodes) {
    const fs::path d = scratch("codes");
    EXPECT_EQ(run("simulate --not-a-flag"), 1);
    EXPECT_EQ(run("diagnose --mode sideways"), 1);
    EXPECT_EQ(run(""), 1);
    {
        std::ofstream(d / "bad.json") << R"({"training": {"bogus": 1}})";
    }
    EXPECT_EQ(run("-c " + (d / "bad.json").string() + " simulate --out " + (d / "x.ndjson").string()), 1);
    const std::string missing = (d / "missing.ckpt").string();
    EXPECT_EQ(run("diagnose --checkpoint " + missing + " --out " + (d / "r.ndjson").string()), 2);
    EXPECT_NE(capture("diagnose --checkpoint " + missing + " --out " + (d / "r.ndjson").string()).find(missing),
              std::string::npos);
}

TEST(Cli, PipelineEmbedsConfigHashEverywhere) {
    const fs::path d = scratch("pipeline");
    {
        std::ofstream(d / "c.json") << R"({"training": {"budget": 300, "epochs": 1, "batch_size": 50, "seed": 4},
            "architecture": {"posterior": {"n_couplings": 2, "hidden_widths": [16]},
                             "likelihood": {"n_couplings": 2, "hidden_widths": [16]}},
            "diagnostics": {"n_datasets": 20, "n_draws": 10, "band_simulations": 1000},
            "paths": {"dataset": ")" + (d / "d.ndjson").string() + R"(", "checkpoint": ")" + (d / "m.ckpt").string() +
                                           R"(", "reports": ")" + (d / "rep").string() + R"("}})";
    }
    const std::string cfg = "-c " + (d / "c.json").string() + " ";
    ASSERT_EQ(run(cfg + "simulate"), 0);
    ASSERT_EQ(run(cfg + "train"), 0);
    ASSERT_EQ(run(cfg + "diagnose --mode sbc"), 0);
    ASSERT_EQ(run(cfg + "estimate --what lml --s 5"), 0);

    const std::string hash = RunConfig::load((d / "c.json").string()).hash();
    EXPECT_EQ(jana::read_dataset((d / "d.ndjson").string()).first.config_hash, hash);
    EXPECT_EQ(jana::checkpoint_load((d / "m.ckpt").string()).config_hash(), hash);
    for (const char* f : {"m.ckpt.trace.ndjson", "rep/calibration.ndjson", "rep/lml.ndjson"}) {
        std::ifstream in(d / f);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("config_hash")) {
                EXPECT_EQ(j["config_hash"], hash) << f;
                ++n;
            }
        }
        EXPECT_GT(n, 0u) << f;
    }
    std::ifstream plot(d / "rep/calibration.plot.json");
    EXPECT_EQ(nlohmann::json::parse(plot)["config_hash"], hash);

    // Wrong model for this checkpoint.
    {
        std::ofstream(d / "ddm.json") << R"({"model": {"name": "two_moons"}})";
    }
    EXPECT_EQ(run("-c " + (d / "ddm.json").string() + " diagnose --checkpoint " + (d / "m.ckpt").string() +
                  " --out " + (d / "x.ndjson").string()),
              2);
}
