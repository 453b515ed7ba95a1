#pragma once

#include "jana/training.hpp"

#include <string>

namespace jana {

/// Invalid or unknown configuration content.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct ModelConfig {
    std::string name = "gaussian_linear";
    Constants constants;
    /// n_obs or series length where the model has one; 0 = model default.
    std::size_t size = 0;
};

struct DiagnosticsConfig {
    std::size_t n_datasets = 200;
    std::size_t n_draws = 100;
    double level = 0.95;
    std::size_t band_simulations = 2000;
};

struct EstimationConfig {
    std::size_t n_draws = 100;
    double critic_quantile = 1.0;
    std::size_t critic_probes = 1000;
};

struct PathsConfig {
    std::string dataset;
    std::string checkpoint;
    std::string reports;
};

/// Everything a command needs. Parsed from JSON; every section and key is
/// optional, unknown keys are errors. See config_schema().
struct RunConfig {
    ModelConfig model;
    TrainingConfig training;
    ApproximatorSpec architecture;
    DiagnosticsConfig diagnostics;
    EstimationConfig estimation;
    PathsConfig paths;

    static RunConfig parse(const std::string& json_text);
    static RunConfig load(const std::string& path);

    /// Fully resolved configuration, keys sorted.
    std::string to_json() const;
    /// Hex FNV-1a of to_json() with the paths section removed.
    std::string hash() const;
    /// JANA_DATASET, JANA_CHECKPOINT and JANA_REPORTS replace the matching paths.
    void apply_env_overrides();
    BayesianModel build_model() const;
    void validate() const;
};

/// Human-readable description of every key and its default.
std::string config_schema();

}  // namespace jana
