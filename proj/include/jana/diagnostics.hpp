#pragma once

#include "jana/training.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace jana {

enum class CalibrationMode { sbc, jsbc };
std::string to_string(CalibrationMode m);
CalibrationMode calibration_mode_from_string(const std::string& s);

struct RankSample {
    std::size_t n_datasets = 0;  // datasets kept
    std::size_t n_draws = 0;     // S
    RealMatrix ranks;            // n_datasets × theta_dim, in [0, 1]
    CalibrationMode mode = CalibrationMode::sbc;
    std::size_t dropped = 0;
    /// Set when n_datasets < 100 or S < 50.
    std::vector<std::string> warnings;
};

using PosteriorSampler = std::function<RealMatrix(const RealMatrix& x, std::size_t n, Rng& rng)>;
using DataSampler = std::function<RealMatrix(const RealRow& theta, Rng& rng)>;

/// Fractional rank of `truth` among the draws: (#{draw < truth} + u·#{draw = truth}) / S.
double fractional_rank(const RealMatrix& draws, Eigen::Index dim, double truth, Rng& rng);

/// Per dataset i (stream rng.split(i)): θ* from the prior, x from `data`, S
/// draws from `posterior`, then fractional ranks. Datasets whose x or draws are
/// non-finite are dropped; more than 5% dropped is an error.
RankSample sbc_ranks(const BayesianModel& model, const PosteriorSampler& posterior, const DataSampler& data,
                     std::size_t n_datasets, std::size_t n_draws, CalibrationMode mode, const Rng& rng);

/// mode = sbc simulates x with the model; mode = jsbc with the likelihood network.
RankSample sbc_ranks(const JointApproximator& approx, const BayesianModel& model, std::size_t n_datasets,
                     std::size_t n_draws, CalibrationMode mode, const Rng& rng);

/// Simultaneous band for the ECDF difference of n fractional ranks.
///
/// Under exact inference a rank sits on one of the S+1 atoms k/S with equal
/// probability; `reference` is that CDF at the grid points, which lie halfway
/// between atoms. The count of ranks below a grid point is binomial, so each
/// point has an exact two-sided tail probability. The band keeps the counts
/// whose tail probability is at least γ, where γ is the (1 - level) quantile
/// of the smallest tail probability along simulated null trajectories.
struct EcdfBand {
    std::vector<double> grid;
    std::vector<double> reference;
    std::vector<double> lower;  // on the ECDF difference, so lower ≤ 0 ≤ upper
    std::vector<double> upper;
    double simultaneous_level = 0.95;
    double gamma = 0;
    std::size_t n_datasets = 0;
    std::size_t n_draws = 0;
    std::size_t n_band_simulations = 0;

    /// ECDF minus reference at the grid points.
    std::vector<double> difference(const std::vector<double>& ranks) const;
    bool contains(const std::vector<double>& ranks) const;
};

EcdfBand ecdf_band(std::size_t n_datasets, std::size_t n_draws, double simultaneous_level,
                   std::size_t n_band_simulations, Rng& rng);

/// Per-dimension level giving family-wise level `level` over `dims` independent
/// dimensions (Šidák): level^(1/dims).
double per_dimension_level(double level, std::size_t dims);

struct DimensionCalibration {
    std::vector<double> ranks;
    std::vector<double> difference;
    bool inside_band = false;
    double max_abs_difference = 0;
};

struct CalibrationReport {
    CalibrationMode mode = CalibrationMode::sbc;
    std::vector<DimensionCalibration> dimensions;
    EcdfBand band;
    double family_level = 0.95;
    std::size_t dropped = 0;
    bool pass = false;
};

CalibrationReport calibration_report(const RankSample& ranks, const EcdfBand& band, double family_level);

/// Which component a pair of reports points at: "none", "likelihood_network"
/// (sbc passes, jsbc fails) or "posterior_network" (sbc fails).
std::string implicated_component(const CalibrationReport& sbc, const CalibrationReport& jsbc);

/// Ranks, a band at the Šidák-adjusted level and the report in one call.
CalibrationReport calibrate(const JointApproximator& approx, const BayesianModel& model, std::size_t n_datasets,
                            std::size_t n_draws, CalibrationMode mode, double family_level,
                            std::size_t n_band_simulations, std::uint64_t seed);

struct MmdTest {
    double statistic = 0;
    double p_value = 1;
    std::size_t n_permutations = 0;
};

/// Unbiased MMD² with the mixture kernel and a permutation p-value
/// (1 + #{perm ≥ observed}) / (1 + n_permutations).
MmdTest mmd_two_sample(const RealMatrix& a, const RealMatrix& b, std::size_t n_permutations, Rng& rng);

/// Fields echoed into every report record.
struct ReportContext {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::string> parameter_names;
};

/// One record per dimension and a summary record per report, then a
/// fault-attribution record when `implicated` is non-empty.
void write_calibration_ndjson(std::ostream& out, const std::vector<CalibrationReport>& reports,
                              const ReportContext& ctx, const std::string& implicated = "");
/// Grid, reference, band and per-dimension trajectories as one JSON document.
void write_calibration_plot_data(std::ostream& out, const std::vector<CalibrationReport>& reports,
                                 const ReportContext& ctx);

}  // namespace jana
