// jana: simulate, train, diagnose and estimate from the command line.

#include "jana/config.hpp"
#include "jana/dataset.hpp"
#include "jana/diagnostics.hpp"
#include "jana/estimators.hpp"
#include "jana/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : jana::Error {
    using Error::Error;
};

std::ofstream open_out(const std::string& path) {
    if (path.empty()) throw UsageError("no output path given");
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw jana::Error("cannot open '" + path + "' for writing");
    return out;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string in_reports(const jana::RunConfig& cfg, const std::string& explicit_path, const std::string& name) {
    if (!explicit_path.empty()) return explicit_path;
    if (cfg.paths.reports.empty()) throw UsageError("no report path: pass --out or set paths.reports");
    return (fs::path(cfg.paths.reports) / name).string();
}

std::string require_path(const std::string& flag_value, const std::string& config_value, const char* what) {
    const std::string& p = flag_value.empty() ? config_value : flag_value;
    if (p.empty()) throw UsageError(std::string("no ") + what + " path given");
    return p;
}

/// The model a checkpoint is evaluated against: the configured one when a
/// config was supplied, otherwise the checkpoint's model with default constants.
jana::BayesianModel model_for(const jana::RunConfig& cfg, bool have_config, const jana::JointApproximator& a) {
    jana::BayesianModel m = have_config ? cfg.build_model() : jana::make_model(a.model_name(), {}, a.data_shape().rows);
    a.require_model(m.name);
    if (!(m.data_shape == a.data_shape()) || m.theta_dim != a.theta_dim())
        throw jana::Error("model '" + m.name + "' has a different data shape than the checkpoint");
    return m;
}

json components_json(const jana::LossComponents& c) {
    return {{"posterior_nll", c.posterior_nll},
            {"likelihood_nll", c.likelihood_nll},
            {"mmd_term", c.mmd_term},
            {"total", c.total}};
}

void write_trace(const std::string& path, const jana::LossTrace& trace, const std::string& hash, std::uint64_t seed,
                 std::optional<std::size_t> best_epoch) {
    std::ofstream out = open_out(path);
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        json r = {{"record", "train_step"}, {"step", i}, {"learning_rate", trace.learning_rates[i]}};
        r.update(components_json(trace.steps[i]));
        out << r.dump() << '\n';
    }
    for (std::size_t e = 0; e < trace.validation.size(); ++e) {
        json r = {{"record", "validation"}, {"epoch", e}};
        r.update(components_json(trace.validation[e]));
        out << r.dump() << '\n';
    }
    json s = {{"record", "training_summary"},
              {"format_version", jana::kFormatVersion},
              {"config_hash", hash},
              {"seed", seed},
              {"n_steps", trace.steps.size()},
              {"n_epochs", trace.validation.size()},
              {"best_epoch", best_epoch ? json(*best_epoch) : json(nullptr)},
              {"diverged", !best_epoch}};
    out << s.dump() << '\n';
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    // simulate
    std::size_t n = 0;
    // train
    std::string data;
    bool online = false;
    std::string trace;
    // diagnose / estimate
    std::string checkpoint;
    std::string mode = "both";
    std::size_t n_datasets = 0;
    std::size_t s = 0;
    std::string what = "lml";
    std::string new_points;
    std::size_t index = 0;
};

int cmd_simulate(const jana::RunConfig& cfg, const Options& o) {
    const jana::BayesianModel model = cfg.build_model();
    const std::size_t n = o.n ? o.n : cfg.training.budget;
    const std::uint64_t seed = o.seed.value_or(cfg.training.seed);
    const std::string path = require_path(o.out, cfg.paths.dataset, "dataset");
    const jana::SimulationBatch batch = jana::presimulate(model, n, seed);
    jana::DatasetMetadata meta = jana::dataset_metadata(model, batch, seed);
    meta.config_hash = cfg.hash();
    meta.created = utc_now();
    std::ofstream out = open_out(path);
    jana::write_dataset(out, meta, batch);
    std::cerr << "wrote " << n << " simulations to " << path << '\n';
    return 0;
}

int cmd_train(const jana::RunConfig& cfg, const Options& o) {
    if (!o.online && o.data.empty() && cfg.paths.dataset.empty()) throw UsageError("pass --data or --online");
    const jana::BayesianModel model = cfg.build_model();
    jana::TrainingConfig tc = cfg.training;
    if (o.seed) tc.seed = *o.seed;
    const std::string ckpt = require_path(o.out, cfg.paths.checkpoint, "checkpoint");
    const std::string trace_path = o.trace.empty() ? ckpt + ".trace.ndjson" : o.trace;
    const std::string hash = cfg.hash();
    const auto progress = [&](std::size_t epoch, const jana::LossComponents& v) {
        std::cerr << "epoch " << epoch + 1 << "/" << tc.epochs << "  validation " << v.total << '\n';
    };
    try {
        jana::TrainingResult res;
        if (o.online) {
            tc.regime = jana::Regime::online;
            res = jana::train(model, cfg.architecture, tc, progress);
        } else {
            const std::string data_path = o.data.empty() ? cfg.paths.dataset : o.data;
            auto [meta, batch] = jana::read_dataset(data_path);
            if (meta.model != model.name) throw jana::IdentifierMismatch(model.name, meta.model);
            tc.regime = jana::Regime::offline;
            tc.budget = static_cast<std::size_t>(batch.size());
            res = jana::train_on(model, batch, cfg.architecture, tc, progress);
        }
        res.best.set_config_hash(hash);
        jana::checkpoint_save(res.best, ckpt);
        write_trace(trace_path, res.trace, hash, tc.seed, res.best_epoch);
        std::cerr << "wrote " << ckpt << " (best epoch " << res.best_epoch + 1 << ")\n";
    } catch (const jana::TrainingDiverged& e) {
        jana::JointApproximator last = e.last_good();
        last.set_config_hash(hash);
        jana::checkpoint_save(last, ckpt);
        write_trace(trace_path, e.trace(), hash, tc.seed, std::nullopt);
        throw jana::Error(std::string(e.what()) + "; last good parameters saved to " + ckpt);
    }
    return 0;
}

int cmd_diagnose(const jana::RunConfig& cfg, bool have_config, const Options& o) {
    const std::string ckpt = require_path(o.checkpoint, cfg.paths.checkpoint, "checkpoint");
    std::vector<jana::CalibrationMode> modes;
    if (o.mode == "sbc" || o.mode == "both") modes.push_back(jana::CalibrationMode::sbc);
    if (o.mode == "jsbc" || o.mode == "both") modes.push_back(jana::CalibrationMode::jsbc);
    const jana::JointApproximator approx = jana::checkpoint_load(ckpt);
    const jana::BayesianModel model = model_for(cfg, have_config, approx);
    const std::size_t n = o.n_datasets ? o.n_datasets : cfg.diagnostics.n_datasets;
    const std::size_t s = o.s ? o.s : cfg.diagnostics.n_draws;
    const std::uint64_t seed = o.seed.value_or(cfg.training.seed);
    const std::string path = in_reports(cfg, o.out, "calibration.ndjson");

    std::vector<jana::CalibrationReport> reports;
    for (auto m : modes)
        reports.push_back(jana::calibrate(approx, model, n, s, m, cfg.diagnostics.level,
                                          cfg.diagnostics.band_simulations, seed));
    std::string implicated;
    if (reports.size() == 2) implicated = jana::implicated_component(reports[0], reports[1]);
    const jana::ReportContext ctx{cfg.hash(), seed, model.parameter_names};
    {
        std::ofstream out = open_out(path);
        jana::write_calibration_ndjson(out, reports, ctx, implicated);
    }
    fs::path plot(path);
    plot.replace_extension(".plot.json");
    {
        std::ofstream out = open_out(plot.string());
        jana::write_calibration_plot_data(out, reports, ctx);
    }
    for (const auto& r : reports)
        std::cerr << jana::to_string(r.mode) << ": " << (r.pass ? "pass" : "fail") << '\n';
    if (!implicated.empty()) std::cerr << "implicated: " << implicated << '\n';
    std::cerr << "wrote " << path << " and " << plot.string() << '\n';
    return 0;
}

jana::RealMatrix first_instance(const std::string& path, const jana::JointApproximator& approx, std::size_t index) {
    auto [meta, batch] = jana::read_dataset(path);
    if (meta.model != approx.model_name()) throw jana::IdentifierMismatch(approx.model_name(), meta.model);
    if (index >= static_cast<std::size_t>(batch.size()))
        throw jana::InvalidArgument("dataset '" + path + "' has no instance " + std::to_string(index));
    return batch.instance(static_cast<Eigen::Index>(index));
}

int cmd_estimate(const jana::RunConfig& cfg, bool have_config, const Options& o) {
    const std::string ckpt = require_path(o.checkpoint, cfg.paths.checkpoint, "checkpoint");
    const std::string data = require_path(o.data, cfg.paths.dataset, "dataset");
    const jana::JointApproximator approx = jana::checkpoint_load(ckpt);
    const jana::BayesianModel model = model_for(cfg, have_config, approx);
    const std::size_t s = o.s ? o.s : cfg.estimation.n_draws;
    const std::uint64_t seed = o.seed.value_or(cfg.training.seed);
    const std::string path = in_reports(cfg, o.out, o.what + ".ndjson");
    const jana::EstimateContext ctx{cfg.hash(), seed, s};
    const jana::Rng rng(seed);

    std::ofstream out;
    if (o.what == "lml") {
        auto [meta, batch] = jana::read_dataset(data);
        if (meta.model != approx.model_name()) throw jana::IdentifierMismatch(approx.model_name(), meta.model);
        std::vector<jana::LmlEstimate> est;
        std::vector<double> analytic;
        for (Eigen::Index i = 0; i < batch.size(); ++i) {
            jana::Rng r = rng.split(static_cast<std::uint64_t>(i));
            const jana::RealMatrix x = batch.instance(i);
            est.push_back(jana::estimate_lml(approx, x, model, s, r));
            if (model.oracles.log_marginal) analytic.push_back(model.oracles.log_marginal(x));
        }
        out = open_out(path);
        jana::write_lml_ndjson(out, est, ctx, analytic);
    } else if (o.what == "elpd") {
        if (o.new_points.empty()) throw UsageError("--what elpd needs --new");
        const jana::RealMatrix fit = first_instance(data, approx, o.index);
        const jana::RealMatrix fresh = first_instance(o.new_points, approx, 0);
        jana::Rng r = rng.split(0);
        const jana::ElpdEstimate e = jana::estimate_elpd(approx, fit, fresh, s, r);
        out = open_out(path);
        jana::write_elpd_ndjson(out, e, "elpd", ctx);
    } else {
        const jana::RealMatrix x = first_instance(data, approx, o.index);
        const jana::ElpdEstimate e = jana::loo_cv(approx, x, s, rng);
        out = open_out(path);
        jana::write_elpd_ndjson(out, e, "loo", ctx);
    }
    std::cerr << "wrote " << path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"jana: amortized posterior and likelihood estimation for simulators"};
    app.footer("\n" + jana::config_schema());
    app.require_subcommand(0, 1);
    Options o;
    bool format_version = false;
    app.add_flag("--format-version", format_version, "print the file format version and exit");
    app.add_option("-c,--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);

    auto add_seed = [&](CLI::App* c) {
        c->add_option("--seed", o.seed, "random seed (defaults to training.seed)");
    };
    auto* sim = app.add_subcommand("simulate", "simulate (θ, x) pairs from the prior predictive into a dataset file");
    sim->add_option("--n", o.n, "number of simulations (defaults to training.budget)");
    add_seed(sim);
    sim->add_option("--out", o.out, "dataset path (defaults to paths.dataset)");

    auto* tr = app.add_subcommand("train", "train the joint approximator and write a checkpoint");
    auto* data_opt = tr->add_option("--data", o.data, "offline training on this dataset file");
    tr->add_flag("--online", o.online, "simulate a fresh batch for every step")->excludes(data_opt);
    tr->add_option("--out-checkpoint", o.out, "checkpoint path (defaults to paths.checkpoint)");
    tr->add_option("--trace", o.trace, "loss trace path (defaults to <checkpoint>.trace.ndjson)");
    add_seed(tr);

    auto* dg = app.add_subcommand("diagnose", "simulation-based calibration of a checkpoint");
    dg->add_option("--checkpoint", o.checkpoint, "checkpoint path (defaults to paths.checkpoint)");
    dg->add_option("--mode", o.mode, "sbc, jsbc or both")->check(CLI::IsMember({"sbc", "jsbc", "both"}));
    dg->add_option("--n-datasets", o.n_datasets, "datasets (defaults to diagnostics.n_datasets)");
    dg->add_option("--s", o.s, "posterior draws per dataset (defaults to diagnostics.n_draws)");
    dg->add_option("--out", o.out, "report path (defaults to <paths.reports>/calibration.ndjson)");
    add_seed(dg);

    auto* es = app.add_subcommand("estimate", "marginal likelihood, ELPD or leave-one-out estimates");
    es->add_option("--checkpoint", o.checkpoint, "checkpoint path (defaults to paths.checkpoint)");
    es->add_option("--what", o.what, "lml, elpd or loo")->check(CLI::IsMember({"lml", "elpd", "loo"}));
    es->add_option("--data", o.data, "dataset file (defaults to paths.dataset)");
    es->add_option("--new", o.new_points, "dataset whose first instance holds the new points (elpd)");
    es->add_option("--index", o.index, "instance of --data to condition on (elpd, loo)");
    es->add_option("--s", o.s, "posterior draws (defaults to estimation.n_draws)");
    es->add_option("--out", o.out, "report path (defaults to <paths.reports>/<what>.ndjson)");
    add_seed(es);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    if (format_version) {
        std::cout << jana::kFormatVersion << '\n';
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 1;
    }
    try {
        jana::RunConfig cfg = o.config.empty() ? jana::RunConfig{} : jana::RunConfig::load(o.config);
        cfg.apply_env_overrides();
        const bool have_config = !o.config.empty();
        if (sim->parsed()) return cmd_simulate(cfg, o);
        if (tr->parsed()) return cmd_train(cfg, o);
        if (dg->parsed()) return cmd_diagnose(cfg, have_config, o);
        return cmd_estimate(cfg, have_config, o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const jana::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
