#pragma once

#include "jana/flow.hpp"
#include "jana/optimizer.hpp"
#include "jana/simulators.hpp"
#include "jana/summary.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace jana {

/// Per-dimension affine transform z = (v - mean) / sd, fit on training data.
struct Standardizer {
    RealRow mean;
    RealRow sd;

    /// Columns with zero spread get sd = 1.
    static Standardizer fit(const RealMatrix& rows);
    static Standardizer identity(std::size_t dim);

    RealMatrix apply(const RealMatrix& rows) const;
    RealMatrix invert(const RealMatrix& rows) const;
    /// log |dz/dv| for one row: -sum(log sd).
    double log_jacobian() const;
};

struct FlowConfig {
    std::size_t n_couplings = 5;
    std::vector<std::size_t> hidden_widths{64, 64};
    Activation activation = Activation::tanh;
    LatentKind latent = LatentKind::standard_gaussian;
    double latent_df = 50.0;
    std::size_t memory_hidden = 32;
    double scale_clamp = 1.9;
    double weight_init_scale = 1.0;
};

struct SummaryConfig {
    /// Defaults to identity for flat data, deep_set for sets, recurrent for series.
    std::optional<SummaryNetwork::Kind> kind;
    std::size_t summary_dim = 10;
    std::size_t n_equivariant_modules = 2;
    std::size_t equivariant_width = 64;
    std::vector<std::size_t> equivariant_hidden{64};
    std::vector<std::size_t> post_pool_hidden{64};
    Activation activation = Activation::relu;
    PoolKind pool = PoolKind::mean;
    std::size_t recurrent_hidden = 32;
};

struct ApproximatorSpec {
    FlowConfig posterior;
    FlowConfig likelihood;
    SummaryConfig summary;
};

/// Summary network, posterior flow q(θ | ℋ(x)) and likelihood flow l(x | θ)
/// plus the data standardizers. All densities it reports are on the original
/// data and parameter scales.
///
/// The likelihood flow targets one observation row: a vanilla flow for flat
/// data, an exchangeable flow over set rows, a markovian flow over series rows.
class JointApproximator {
public:
    JointApproximator() = default;
    static JointApproximator create(const BayesianModel& model, const ApproximatorSpec& spec, Standardizer theta_std,
                                    Standardizer x_std, std::uint64_t seed);
    static JointApproximator build(std::string model_name, std::size_t theta_dim, DataShape shape,
                                   const ApproximatorSpec& spec, Standardizer theta_std, Standardizer x_std,
                                   std::uint64_t seed);

    const std::string& model_name() const noexcept { return model_name_; }
    std::size_t theta_dim() const noexcept { return theta_dim_; }
    const DataShape& data_shape() const noexcept { return shape_; }
    const ApproximatorSpec& spec() const noexcept { return spec_; }
    std::uint64_t init_seed() const noexcept { return seed_; }
    /// Digest of the configuration that produced this approximator; persisted in checkpoints.
    const std::string& config_hash() const noexcept { return config_hash_; }
    void set_config_hash(std::string h) { config_hash_ = std::move(h); }
    const Standardizer& theta_standardizer() const noexcept { return theta_std_; }
    const Standardizer& x_standardizer() const noexcept { return x_std_; }
    const SummaryNetwork& summary() const noexcept { return summary_; }
    const ConditionalInvertibleNetwork& posterior_net() const noexcept { return posterior_; }
    const ConditionalInvertibleNetwork& likelihood_net() const noexcept { return likelihood_; }
    SummaryNetwork& summary() noexcept { return summary_; }
    ConditionalInvertibleNetwork& posterior_net() noexcept { return posterior_; }
    ConditionalInvertibleNetwork& likelihood_net() noexcept { return likelihood_; }

    /// Throws IdentifierMismatch unless `name` is the model this was trained on.
    void require_model(const std::string& name) const;

    /// Set-shaped approximators accept sets of any size here and in the
    /// density and sampling methods; other shapes must match exactly.
    RealRow embed(const RealMatrix& x) const;
    /// Embeddings of a stacked batch.
    RealMatrix embed_batch(const RealMatrix& stacked) const;

    /// n posterior draws for one instance.
    RealMatrix posterior_sample(const RealMatrix& x, std::size_t n, Rng& rng) const;
    /// log q(θ_i | x) for each row θ_i.
    RealVector posterior_log_prob(const RealMatrix& theta, const RealMatrix& x) const;

    /// log l(x | θ) for one instance.
    double likelihood_log_prob(const RealMatrix& x, const RealRow& theta) const;
    /// Per-observation terms of log l(x | θ) (sets: log l(x_i | θ); series: the
    /// one-step conditionals; flat: a single term).
    RealVector likelihood_terms(const RealMatrix& x, const RealRow& theta) const;
    /// One surrogate instance.
    RealMatrix likelihood_sample(const RealRow& theta, Rng& rng) const;

    std::vector<RealMatrix*> parameters();
    std::vector<const RealMatrix*> parameters() const;

private:
    void check_instance(const RealMatrix& x) const;

    std::string model_name_;
    std::size_t theta_dim_ = 0;
    DataShape shape_;
    ApproximatorSpec spec_;
    std::uint64_t seed_ = 0;
    std::string config_hash_;
    Standardizer theta_std_;
    Standardizer x_std_;
    SummaryNetwork summary_;
    ConditionalInvertibleNetwork posterior_;
    ConditionalInvertibleNetwork likelihood_;
};

struct LossComponents {
    double posterior_nll = 0;
    double likelihood_nll = 0;
    double mmd_term = 0;
    double total = 0;
};

struct JointLoss {
    Var total;
    LossComponents components;
};

/// total = mean[-log q(θ | ℋ(x)) - log l(x | θ)] + λ·MMD²(ℋ(x) ‖ N(0, I)).
/// NLLs are on the original scales. The MMD term is only evaluated for λ > 0.
JointLoss joint_loss(Tape& tape, const JointApproximator& approx, const SimulationBatch& batch, double lambda, Rng& rng);
LossComponents joint_loss(const JointApproximator& approx, const SimulationBatch& batch, double lambda, Rng& rng);

enum class Regime { offline, online };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct TrainingConfig {
    std::size_t budget = 10000;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double initial_lr = 1e-3;
    double min_lr = 0.0;
    double lambda_mmd = 0.0;
    /// L2 penalty weight_decay·‖w‖² on every network tensor, applied through
    /// the gradient only; the logged loss components leave it out.
    double weight_decay = 0.0;
    Regime regime = Regime::offline;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t validation_size() const;
    std::size_t train_size() const;
    std::size_t steps_per_epoch() const;
};

struct LossTrace {
    std::vector<LossComponents> steps;
    std::vector<LossComponents> validation;  // one per epoch
    std::vector<double> learning_rates;
};

struct TrainingResult {
    JointApproximator approximator;
    /// Parameters at the epoch with the lowest validation total.
    JointApproximator best;
    std::size_t best_epoch = 0;
    LossTrace trace;
};

/// Raised when the loss becomes non-finite. Carries the approximator as it was
/// before the failing step.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, JointApproximator last_good, LossTrace trace)
        : Error(what), last_good_(std::move(last_good)), trace_(std::move(trace)) {}
    const JointApproximator& last_good() const noexcept { return last_good_; }
    const LossTrace& trace() const noexcept { return trace_; }

private:
    JointApproximator last_good_;
    LossTrace trace_;
};

using EpochCallback = std::function<void(std::size_t epoch, const LossComponents& validation)>;

/// Offline: presimulate the budget once and make `epochs` shuffled passes.
/// Online: simulate a fresh batch for every step. The learning rate follows a
/// cosine decay over all steps. Deterministic given config.seed.
TrainingResult train(const BayesianModel& model, const ApproximatorSpec& spec, const TrainingConfig& config,
                     const EpochCallback& on_epoch = {});
/// Offline training on an existing simulation set; the simulator is never called.
TrainingResult train_on(const BayesianModel& model, const SimulationBatch& data, const ApproximatorSpec& spec,
                        const TrainingConfig& config, const EpochCallback& on_epoch = {});

/// Versioned binary checkpoint; layout in docs/checkpoint_format.md.
void checkpoint_save(const JointApproximator& approx, std::ostream& out);
void checkpoint_save(const JointApproximator& approx, const std::string& path);
JointApproximator checkpoint_load(std::istream& in);
JointApproximator checkpoint_load(const std::string& path);

/// Architecture description as JSON text (also embedded in checkpoints).
std::string architecture_json(const JointApproximator& approx);

}  // namespace jana
