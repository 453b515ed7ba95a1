#pragma once

#include "jana/coupling.hpp"
#include "jana/gru.hpp"
#include "jana/latent.hpp"

#include <string>
#include <vector>

namespace jana {

enum class FlowVariant { vanilla, exchangeable, markovian };

std::string to_string(FlowVariant v);
FlowVariant flow_variant_from_string(const std::string& s);

struct FlowSpec {
    /// Dimension of one target vector (one observation for set/series data).
    std::size_t dim = 2;
    /// Dimension of the external condition (summary embedding or parameters).
    std::size_t condition_dim = 0;
    std::size_t n_couplings = 4;
    std::vector<std::size_t> hidden_widths{64, 64};
    Activation activation = Activation::tanh;
    double scale_clamp = 1.9;
    double weight_init_scale = 1.0;
    LatentKind latent = LatentKind::standard_gaussian;
    double latent_df = 50.0;
    FlowVariant variant = FlowVariant::vanilla;
    /// Hidden size of the recurrent memory (markovian only).
    std::size_t memory_hidden = 32;
    /// Seeds weight initialisation and the fixed permutations between couplings.
    std::uint64_t seed = 0;

    void validate() const;
};

struct FlowPass {
    Var out;
    Var log_det;  // rows × 1
};

/// Stack of conditional affine couplings with fixed seeded coordinate
/// permutations between consecutive layers and a latent base density.
///
/// For the markovian variant the couplings at series step n are conditioned
/// on (condition, h_{n-1}), where h_n = GRU([condition, x_n], h_{n-1}) and
/// h_0 = 0. `forward`, `inverse` and `log_prob` take the full coupling
/// condition; the set and series helpers assemble it.
class ConditionalInvertibleNetwork {
public:
    ConditionalInvertibleNetwork() = default;
    explicit ConditionalInvertibleNetwork(FlowSpec spec);

    const FlowSpec& spec() const noexcept { return spec_; }
    const LatentDistribution& latent() const noexcept { return latent_; }
    std::size_t coupling_condition_dim() const noexcept;

    FlowPass forward(Tape& tape, Var target, Var coupling_condition) const;
    FlowPass inverse(Tape& tape, Var z, Var coupling_condition) const;
    /// latent.log_prob(z) + sum of log-dets, one value per row.
    Var log_prob(Tape& tape, Var target, Var coupling_condition) const;

    /// Exchangeable sets stored as consecutive groups of `set_size` rows, one
    /// condition row per set; returns the per-set sum of point log densities.
    Var set_log_prob(Tape& tape, Var rows, Var condition, Eigen::Index set_size) const;
    /// Series stored as consecutive groups of `length` rows (markovian only).
    Var series_log_prob(Tape& tape, Var rows, Var condition, Eigen::Index length) const;

    /// One draw per row of `coupling_condition`.
    RealMatrix sample_rows(const RealMatrix& coupling_condition, Rng& rng) const;
    /// Autoregressive series for each condition row; output rows b·T + t.
    RealMatrix sample_series(const RealMatrix& condition, Eigen::Index length, Rng& rng) const;

    const std::vector<CouplingLayer>& layers() const noexcept { return layers_; }
    std::vector<CouplingLayer>& layers() noexcept { return layers_; }
    const std::vector<std::vector<Eigen::Index>>& permutations() const noexcept { return perms_; }
    const GruCell& memory() const noexcept { return memory_; }
    GruCell& memory() noexcept { return memory_; }

    /// Every trainable tensor in a fixed order (couplings first, then memory).
    std::vector<RealMatrix*> parameters();
    std::vector<const RealMatrix*> parameters() const;

private:
    Var condition_rows(Tape& tape, Var condition, Eigen::Index rows) const;

    FlowSpec spec_;
    LatentDistribution latent_;
    std::vector<CouplingLayer> layers_;
    // perms_[l] is applied to the input of layer l (identity for l = 0).
    std::vector<std::vector<Eigen::Index>> perms_;
    std::vector<std::vector<Eigen::Index>> inverse_perms_;
    std::vector<Eigen::Index> shuffled_order_;
    std::vector<Eigen::Index> restore_order_;
    GruCell memory_;
};

/// Log density of each target row. `condition` has one row per target row, or
/// a single row shared by all of them.
RealVector flow_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& target, const RealMatrix& condition);

/// `n_draws` samples for one condition row; n_draws = 0 gives an empty matrix.
RealMatrix flow_sample(const ConditionalInvertibleNetwork& net, const RealRow& condition, std::size_t n_draws, Rng& rng);

/// Sum of point log densities of an exchangeable set given parameters.
/// Rows are put in lexicographic order before evaluation, so the result is
/// bit-identical under any permutation. The empty set has log density 0.
double exchangeable_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& x_set, const RealRow& theta);

/// Log density of an ordered series (T × dim) under a markovian network.
double markovian_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& series, const RealRow& theta);

/// Per-step conditional log densities log p(x_n | theta, x_{1:n-1}).
RealVector markovian_step_log_probs(const ConditionalInvertibleNetwork& net, const RealMatrix& series, const RealRow& theta);

RealMatrix markovian_sample(const ConditionalInvertibleNetwork& net, const RealRow& theta, std::size_t length, Rng& rng);

/// Lexicographic row order (stable).
std::vector<Eigen::Index> canonical_row_order(const RealMatrix& rows);

}  // namespace jana
