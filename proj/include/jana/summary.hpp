#pragma once

#include "jana/data.hpp"
#include "jana/dense.hpp"
#include "jana/gru.hpp"

#include <string>
#include <vector>

namespace jana {

enum class PoolKind { mean, sum };

std::string to_string(PoolKind p);
PoolKind pool_kind_from_string(const std::string& s);

struct DeepSetSpec {
    std::size_t input_dim = 1;
    std::size_t n_equivariant_modules = 2;
    /// Hidden widths and output width shared by every per-element subnet.
    DenseNetworkSpec equivariant_subnet{1, {64}, 64, Activation::relu, 1.0};
    PoolKind invariant_pool = PoolKind::mean;
    /// Maps the pooled vector to the embedding; input_dim and output_dim are filled in.
    DenseNetworkSpec post_pool_subnet{64, {64}, 8, Activation::relu, 1.0};
    std::size_t summary_dim = 8;

    void validate() const;
};

struct RecurrentSummarySpec {
    std::size_t input_dim = 1;
    std::size_t hidden_dim = 32;
    std::size_t summary_dim = 8;

    void validate() const;
};

/// ℋ(x). `identity` flattens the instance row-wise and passes it through;
/// `deep_set` is invariant to the order of set rows; `recurrent` runs a GRU
/// over the series and maps the final state to the embedding.
///
/// A deep-set module m computes, per element,
///   h_i' = ψ_m([h_i, pool_j φ_m(h_j)])
/// and the embedding is ρ(pool_j h_j) after the last module. Set rows are put
/// in lexicographic order first so pooling sums in a fixed order.
class SummaryNetwork {
public:
    enum class Kind { identity, deep_set, recurrent };

    SummaryNetwork() = default;
    static SummaryNetwork identity(DataShape shape);
    static SummaryNetwork deep_set(DataShape shape, DeepSetSpec spec, Rng& rng);
    static SummaryNetwork recurrent(DataShape shape, RecurrentSummarySpec spec, Rng& rng);

    Kind kind() const noexcept { return kind_; }
    const DataShape& shape() const noexcept { return shape_; }
    std::size_t summary_dim() const noexcept { return summary_dim_; }
    const DeepSetSpec& deep_set_spec() const noexcept { return deep_set_; }
    const RecurrentSummarySpec& recurrent_spec() const noexcept { return recurrent_; }

    /// Embeddings for a stacked batch (one row per instance).
    Var forward(Tape& tape, const RealMatrix& stacked) const;
    /// Deep-set embeddings of sets of `set_size` rows, which may differ from shape().rows.
    Var forward_sets(Tape& tape, const RealMatrix& stacked, Eigen::Index set_size) const;

    std::vector<RealMatrix*> parameters();
    std::vector<const RealMatrix*> parameters() const;

private:
    Kind kind_ = Kind::identity;
    DataShape shape_;
    std::size_t summary_dim_ = 0;
    DeepSetSpec deep_set_;
    RecurrentSummarySpec recurrent_;
    std::vector<DenseNetwork> phi_;  // per module, inner invariant branch
    std::vector<DenseNetwork> psi_;  // per module, equivariant update
    DenseNetwork rho_;
    GruCell gru_;
};

std::string to_string(SummaryNetwork::Kind k);
SummaryNetwork::Kind summary_kind_from_string(const std::string& s);

/// Embedding of one instance (rows × dim).
RealRow summarize(const SummaryNetwork& net, const RealMatrix& instance);
/// Embeddings of a stacked batch, one row per instance.
RealMatrix summarize_batch(const SummaryNetwork& net, const RealMatrix& stacked);

/// Each set of `set_size` consecutive rows reordered lexicographically.
RealMatrix canonicalize_sets(const RealMatrix& stacked, Eigen::Index set_size);

/// Mixture of Gaussian kernels exp(-|a-b|²/(2h²)) averaged over
/// h ∈ {0.5, 1, 2, 4, 8}.
Var mixture_kernel(Var a, Var b);
inline constexpr double kKernelBandwidths[] = {0.5, 1.0, 2.0, 4.0, 8.0};

/// Unbiased squared MMD between the row samples x (n×d) and y (m×d), n, m ≥ 2.
Var mmd2_unbiased(Var x, Var y);
double mmd2_unbiased(const RealMatrix& x, const RealMatrix& y);

/// Unbiased squared MMD between `embeddings` and as many fresh unit-Gaussian draws.
Var mmd_penalty(Tape& tape, Var embeddings, Rng& rng);
double mmd_penalty(const RealMatrix& embeddings, Rng& rng);

}  // namespace jana
