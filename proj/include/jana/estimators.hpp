#pragma once

#include "jana/diagnostics.hpp"
#include "jana/training.hpp"

#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace jana {

inline constexpr double kLmlSpreadFlag = 1.0;

/// log p̂(x) = log l(x | θ) + log p(θ) - log q(θ | x) per posterior draw.
struct LmlEstimate {
    std::vector<double> per_theta;
    double point_estimate = 0;    // median
    std::optional<double> spread;  // standard deviation; absent for a single draw
    bool flagged = false;          // spread > kLmlSpreadFlag
    std::size_t n_draws = 0;
    std::size_t excluded = 0;  // draws with a non-finite term
};

LmlEstimate estimate_lml(const JointApproximator& approx, const RealMatrix& x, const BayesianModel& model,
                         std::size_t n_draws, Rng& rng);

/// Per new point, log (1/S) Σ_s l(x_new | θ_s) with θ_s ~ q(· | x_fit).
struct ElpdEstimate {
    std::vector<double> per_point;
    double total = 0;
    std::size_t n_draws = 0;
    std::size_t excluded = 0;
};

/// Needs a set-shaped (exchangeable) approximator; x_new holds K points as rows.
ElpdEstimate estimate_elpd(const JointApproximator& approx, const RealMatrix& x_fit, const RealMatrix& x_new,
                           std::size_t n_draws, Rng& rng);

/// Fold i fits on the set without row i and scores row i. The fold's random
/// stream is keyed by the held-out row's value and the total is summed in
/// canonical row order, so permuting x_set leaves the total unchanged.
ElpdEstimate loo_cv(const JointApproximator& approx, const RealMatrix& x_set, std::size_t n_draws, const Rng& rng);

/// Reference critic scores log q(θ | x) for real-simulator draws x at a fixed θ.
/// Scores are computed on first use for each θ and cached.
class CriticReference {
public:
    CriticReference(BayesianModel model, std::size_t n_probes = 1000, std::uint64_t seed = 0);

    const std::string& model_name() const noexcept { return model_.name; }
    std::size_t n_probes() const noexcept { return n_probes_; }
    /// Sorted scores at θ.
    const std::vector<double>& scores(const JointApproximator& approx, const RealRow& theta) const;
    bool cached(const RealRow& theta) const;

private:
    BayesianModel model_;
    std::size_t n_probes_;
    std::uint64_t seed_;
    mutable std::mutex mutex_;
    mutable std::map<std::vector<double>, std::vector<double>> cache_;
};

struct FilteredSimulations {
    RealMatrix x;                 // accepted instances, stacked
    std::vector<double> scores;   // critic score of every draw, in draw order
    std::vector<bool> accepted;
    std::size_t n_draws = 0;
    std::size_t n_accepted = 0;
    double critic_quantile = 1.0;
    std::optional<double> threshold;

    double rejection_rate() const { return n_draws ? 1.0 - double(n_accepted) / double(n_draws) : 0.0; }
};

/// Surrogate draws x̃ ~ l(· | θ) scored by log q(θ | x̃); draws scoring below the
/// critic_quantile of the reference scores at θ are rejected. critic_quantile = 1
/// disables filtering and needs no reference; otherwise a missing reference is
/// an error.
FilteredSimulations surrogate_simulate_filtered(const JointApproximator& approx, const RealRow& theta,
                                                std::size_t n_draws, double critic_quantile,
                                                const CriticReference* reference, Rng& rng);

/// Empirical quantile (linear interpolation between order statistics).
double empirical_quantile(const std::vector<double>& sorted, double q);

struct EstimateContext {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t n_draws = 0;
};

void write_lml_ndjson(std::ostream& out, const std::vector<LmlEstimate>& estimates, const EstimateContext& ctx,
                      const std::vector<double>& reference = {});
void write_elpd_ndjson(std::ostream& out, const ElpdEstimate& estimate, const std::string& what,
                       const EstimateContext& ctx);
void write_filtered_ndjson(std::ostream& out, const FilteredSimulations& sims, const RealRow& theta,
                           const EstimateContext& ctx);

}  // namespace jana
