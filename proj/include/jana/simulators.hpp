#pragma once

#include "jana/data.hpp"
#include "jana/rng.hpp"

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace jana {

/// Thrown by a simulator when a draw cannot be produced (non-finite state,
/// negative population, ...). presimulate retries the row.
class SimulationFailure : public Error {
public:
    using Error::Error;
};

using Constants = std::map<std::string, double>;

struct AnalyticOracles {
    /// n exact posterior draws given one data instance.
    std::function<RealMatrix(const RealMatrix& x, std::size_t n, Rng& rng)> posterior_sampler;
    /// log p(x).
    std::function<double(const RealMatrix& x)> log_marginal;
    /// log p(x_new | x_obs) for one new observation row given an observed set.
    std::function<double(const RealRow& x_new, const RealMatrix& x_obs)> posterior_predictive_log_density;
    /// Exact posterior mean and covariance (Gaussian cases).
    std::function<std::pair<RealRow, RealMatrix>(const RealMatrix& x)> posterior_moments;
};

struct BayesianModel {
    std::string name;
    std::size_t theta_dim = 0;
    DataShape data_shape;
    std::function<RealRow(Rng&)> prior_sampler;
    std::function<double(const RealRow&)> prior_log_density;
    /// Returns one instance shaped data_shape.rows × data_shape.dim.
    std::function<RealMatrix(const RealRow&, Rng&)> simulator;
    AnalyticOracles oracles;
    /// Every numeric constant the model was built with.
    Constants constants;
    /// ODE or SDE step size; 0 when the simulator has none.
    double dt = 0.0;
    std::vector<std::string> parameter_names;
    /// ddm only: number of diffusion paths redrawn because they were not
    /// absorbed within the horizon.
    std::shared_ptr<std::atomic<std::uint64_t>> resampled_paths;

    bool in_prior_support(const RealRow& theta) const;
};

struct SimulationBatch {
    DataShape shape;
    RealMatrix theta;                  // B × theta_dim
    RealMatrix x;                      // (B · shape.rows) × shape.dim
    std::vector<std::uint64_t> seeds;  // per row

    Eigen::Index size() const noexcept { return theta.rows(); }
    RealMatrix instance(Eigen::Index i) const;
    /// Rows in `index` order.
    SimulationBatch select(const std::vector<Eigen::Index>& index) const;
};

inline constexpr int kSimulationAttempts = 10;

/// One row from its seed: θ from the prior, then x from the simulator. A
/// failing attempt is retried with a fresh sub-seed (θ and noise) up to
/// kSimulationAttempts times; after that SimulationFailure names the last θ.
std::pair<RealRow, RealMatrix> simulate_row(const BayesianModel& model, std::uint64_t row_seed);

/// N IID draws from the joint. Row i uses seed derive_seed(seed, i), so the
/// result does not depend on how rows are scheduled.
SimulationBatch presimulate(const BayesianModel& model, std::size_t n, std::uint64_t seed);

/// Benchmarks. `overrides` replaces named constants; unknown names are rejected.
BayesianModel gaussian_linear(const Constants& overrides = {});
BayesianModel gaussian_linear_uniform(const Constants& overrides = {});
BayesianModel slcp(const Constants& overrides = {});
BayesianModel bernoulli_glm(const Constants& overrides = {});
BayesianModel gaussian_mixture(const Constants& overrides = {});
enum class MoonsVariant { wiqvist, lueckmann_wide };
BayesianModel two_moons(MoonsVariant variant, const Constants& overrides = {});
BayesianModel sir(const Constants& overrides = {});
BayesianModel lotka_volterra(const Constants& overrides = {});
BayesianModel ddm(std::size_t n_obs, const Constants& overrides = {});
/// μ ~ N(m0, s0²), x_i ~ N(μ, s²), i = 1..n: conjugate exchangeable toy.
BayesianModel gaussian_iid(std::size_t n_obs, const Constants& overrides = {});
/// x_t = ρ x_{t-1} + ε_t with stationary start, ρ ~ U(lo, hi).
BayesianModel ar1(std::size_t length, const Constants& overrides = {});

/// Builds a model by identifier: gaussian_linear, gaussian_linear_uniform,
/// slcp, bernoulli_glm, gaussian_mixture, two_moons (wiqvist),
/// two_moons_wide, sir, lotka_volterra, ddm, gaussian_iid, ar1. `size`
/// sets n_obs or the series length where the model has one (0 = default).
BayesianModel make_model(const std::string& name, const Constants& overrides = {}, std::size_t size = 0);
std::vector<std::string> model_names();

/// S, I, R at the observation times (rows) by fixed-step RK4.
RealMatrix sir_states(const Constants& c, double beta, double gamma);
/// Prey and predator at the observation times by fixed-step RK4.
RealMatrix lotka_volterra_states(const Constants& c, const RealRow& theta);

/// Two-moons likelihood density of x given θ under the model's constants.
double two_moons_log_likelihood(const Constants& c, const RealRow& theta, const RealRow& x);

}  // namespace jana
