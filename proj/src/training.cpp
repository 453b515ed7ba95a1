#include "jana/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace jana {

Standardizer Standardizer::fit(const RealMatrix& rows) {
    if (rows.rows() == 0 || rows.cols() == 0) throw InvalidArgument("cannot fit a standardizer on no data");
    require_finite(rows, "standardizer input");
    Standardizer s;
    s.mean = rows.colwise().mean();
    const double denom = rows.rows() > 1 ? static_cast<double>(rows.rows() - 1) : 1.0;
    s.sd = ((rows.rowwise() - s.mean).array().square().colwise().sum() / denom).sqrt().matrix();
    for (Eigen::Index j = 0; j < s.sd.size(); ++j)
        if (!(s.sd(j) > 1e-12)) s.sd(j) = 1.0;
    return s;
}

Standardizer Standardizer::identity(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {RealRow::Zero(d), RealRow::Ones(d)};
}

RealMatrix Standardizer::apply(const RealMatrix& rows) const {
    require_cols(rows, static_cast<std::size_t>(mean.size()), "standardizer input");
    return ((rows.rowwise() - mean).array().rowwise() / sd.array()).matrix();
}

RealMatrix Standardizer::invert(const RealMatrix& rows) const {
    require_cols(rows, static_cast<std::size_t>(mean.size()), "standardizer input");
    return ((rows.array().rowwise() * sd.array()).rowwise() + mean.array()).matrix();
}

double Standardizer::log_jacobian() const { return -sd.array().log().sum(); }

JointApproximator JointApproximator::create(const BayesianModel& model, const ApproximatorSpec& spec,
                                            Standardizer theta_std, Standardizer x_std, std::uint64_t seed) {
    return build(model.name, model.theta_dim, model.data_shape, spec, std::move(theta_std), std::move(x_std), seed);
}

namespace {

SummaryNetwork::Kind default_summary(const DataShape& shape) {
    switch (shape.kind) {
        case DataShape::Kind::set: return SummaryNetwork::Kind::deep_set;
        case DataShape::Kind::series: return SummaryNetwork::Kind::recurrent;
        case DataShape::Kind::flat: break;
    }
    return SummaryNetwork::Kind::identity;
}

FlowVariant likelihood_variant(const DataShape& shape) {
    switch (shape.kind) {
        case DataShape::Kind::set: return FlowVariant::exchangeable;
        case DataShape::Kind::series: return FlowVariant::markovian;
        case DataShape::Kind::flat: break;
    }
    return FlowVariant::vanilla;
}

FlowSpec flow_spec(const FlowConfig& c, std::size_t dim, std::size_t condition_dim, FlowVariant v, std::uint64_t seed) {
    FlowSpec f;
    f.dim = dim;
    f.condition_dim = condition_dim;
    f.n_couplings = c.n_couplings;
    f.hidden_widths = c.hidden_widths;
    f.activation = c.activation;
    f.scale_clamp = c.scale_clamp;
    f.weight_init_scale = c.weight_init_scale;
    f.latent = c.latent;
    f.latent_df = c.latent_df;
    f.variant = v;
    f.memory_hidden = c.memory_hidden;
    f.seed = seed;
    return f;
}

}  // namespace

JointApproximator JointApproximator::build(std::string model_name, std::size_t theta_dim, DataShape shape,
                                           const ApproximatorSpec& spec, Standardizer theta_std, Standardizer x_std,
                                           std::uint64_t seed) {
    if (theta_dim < 1) throw InvalidArgument("theta_dim must be >= 1");
    if (static_cast<std::size_t>(theta_std.mean.size()) != theta_dim || theta_std.sd.size() != theta_std.mean.size())
        throw DimensionError("parameter standardizer", theta_dim, theta_std.mean.size());
    if (static_cast<std::size_t>(x_std.mean.size()) != shape.dim || x_std.sd.size() != x_std.mean.size())
        throw DimensionError("data standardizer", shape.dim, x_std.mean.size());

    JointApproximator a;
    a.model_name_ = std::move(model_name);
    a.theta_dim_ = theta_dim;
    a.shape_ = shape;
    a.spec_ = spec;
    a.seed_ = seed;
    a.theta_std_ = std::move(theta_std);
    a.x_std_ = std::move(x_std);

    const SummaryConfig& sc = spec.summary;
    const auto kind = sc.kind.value_or(default_summary(shape));
    a.spec_.summary.kind = kind;
    Rng rng(Rng::derive_seed(seed, 1));
    switch (kind) {
        case SummaryNetwork::Kind::identity: a.summary_ = SummaryNetwork::identity(shape); break;
        case SummaryNetwork::Kind::deep_set: {
            DeepSetSpec ds;
            ds.n_equivariant_modules = sc.n_equivariant_modules;
            ds.equivariant_subnet = {shape.dim, sc.equivariant_hidden, sc.equivariant_width, sc.activation, 1.0};
            ds.invariant_pool = sc.pool;
            ds.post_pool_subnet = {sc.equivariant_width, sc.post_pool_hidden, sc.summary_dim, sc.activation, 1.0};
            ds.summary_dim = sc.summary_dim;
            a.summary_ = SummaryNetwork::deep_set(shape, ds, rng);
            break;
        }
        case SummaryNetwork::Kind::recurrent:
            a.summary_ = SummaryNetwork::recurrent(shape, {shape.dim, sc.recurrent_hidden, sc.summary_dim}, rng);
            break;
    }
    a.posterior_ = ConditionalInvertibleNetwork(
        flow_spec(spec.posterior, theta_dim, a.summary_.summary_dim(), FlowVariant::vanilla, Rng::derive_seed(seed, 2)));
    a.likelihood_ = ConditionalInvertibleNetwork(
        flow_spec(spec.likelihood, shape.dim, theta_dim, likelihood_variant(shape), Rng::derive_seed(seed, 3)));
    return a;
}

void JointApproximator::require_model(const std::string& name) const {
    if (name != model_name_)
        throw IdentifierMismatch(name, model_name_);
}

void JointApproximator::check_instance(const RealMatrix& x) const {
    if (shape_.kind != DataShape::Kind::set) return shape_.check(x);
    require_cols(x, shape_.dim, "set columns");
    if (x.rows() == 0) throw InvalidArgument("empty set");
}

RealRow JointApproximator::embed(const RealMatrix& x) const {
    check_instance(x);
    if (summary_.kind() == SummaryNetwork::Kind::deep_set && static_cast<std::size_t>(x.rows()) != shape_.rows) {
        Tape tape(Tape::Mode::inference);
        return summary_.forward_sets(tape, x_std_.apply(x), x.rows()).value().row(0);
    }
    return summarize(summary_, x_std_.apply(x));
}

RealMatrix JointApproximator::embed_batch(const RealMatrix& stacked) const {
    shape_.count(stacked);
    return summarize_batch(summary_, x_std_.apply(stacked));
}

RealMatrix JointApproximator::posterior_sample(const RealMatrix& x, std::size_t n, Rng& rng) const {
    const RealRow e = embed(x);
    if (n == 0) return RealMatrix(0, static_cast<Eigen::Index>(theta_dim_));
    return theta_std_.invert(flow_sample(posterior_, e, n, rng));
}

RealVector JointApproximator::posterior_log_prob(const RealMatrix& theta, const RealMatrix& x) const {
    require_cols(theta, theta_dim_, "parameters");
    const RealRow e = embed(x);
    RealVector lp = flow_log_prob(posterior_, theta_std_.apply(theta), e);
    return lp.array() + theta_std_.log_jacobian();
}

RealVector JointApproximator::likelihood_terms(const RealMatrix& x, const RealRow& theta) const {
    check_instance(x);
    if (static_cast<std::size_t>(theta.cols()) != theta_dim_)
        throw DimensionError("parameter dimension", theta_dim_, theta.cols());
    const RealRow th = theta_std_.apply(theta);
    const RealMatrix xs = x_std_.apply(x);
    RealVector terms;
    switch (shape_.kind) {
        case DataShape::Kind::flat:
        case DataShape::Kind::set: terms = flow_log_prob(likelihood_, xs, th); break;
        case DataShape::Kind::series: terms = markovian_step_log_probs(likelihood_, xs, th); break;
    }
    return terms.array() + x_std_.log_jacobian();
}

double JointApproximator::likelihood_log_prob(const RealMatrix& x, const RealRow& theta) const {
    if (shape_.kind == DataShape::Kind::set) {
        // canonical order so the value does not depend on row order
        check_instance(x);
        const RealRow th = theta_std_.apply(theta);
        return exchangeable_log_prob(likelihood_, x_std_.apply(x), th) +
               static_cast<double>(x.rows()) * x_std_.log_jacobian();
    }
    return likelihood_terms(x, theta).sum();
}

RealMatrix JointApproximator::likelihood_sample(const RealRow& theta, Rng& rng) const {
    if (static_cast<std::size_t>(theta.cols()) != theta_dim_)
        throw DimensionError("parameter dimension", theta_dim_, theta.cols());
    const RealRow th = theta_std_.apply(theta);
    RealMatrix xs;
    switch (shape_.kind) {
        case DataShape::Kind::flat:
        case DataShape::Kind::set: xs = flow_sample(likelihood_, th, shape_.rows, rng); break;
        case DataShape::Kind::series: xs = markovian_sample(likelihood_, th, shape_.rows, rng); break;
    }
    return x_std_.invert(xs);
}

std::vector<RealMatrix*> JointApproximator::parameters() {
    std::vector<RealMatrix*> out = summary_.parameters();
    for (auto* p : posterior_.parameters()) out.push_back(p);
    for (auto* p : likelihood_.parameters()) out.push_back(p);
    return out;
}

std::vector<const RealMatrix*> JointApproximator::parameters() const {
    std::vector<const RealMatrix*> out = summary_.parameters();
    for (auto* p : posterior_.parameters()) out.push_back(p);
    for (auto* p : likelihood_.parameters()) out.push_back(p);
    return out;
}

namespace {

template <class F>
Var guarded(const char* component, F&& f) {
    try {
        return f();
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(component) + " (" + e.site() + ")");
    }
}

}  // namespace

JointLoss joint_loss(Tape& tape, const JointApproximator& approx, const SimulationBatch& batch, double lambda, Rng& rng) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    if (!(batch.shape == approx.data_shape()))
        throw InvalidArgument("batch data shape " + describe(batch.shape) + " does not match approximator " +
                              describe(approx.data_shape()));
    require_cols(batch.theta, approx.theta_dim(), "parameters");
    const Eigen::Index n = batch.size();
    if (n < 1) throw InvalidArgument("empty batch");
    if (approx.data_shape().count(batch.x) != n) throw DimensionError("batch instances", n, approx.data_shape().count(batch.x));
    if (lambda > 0.0 && n < 2) throw InvalidArgument("the MMD term needs at least two instances per batch");

    const auto rows = static_cast<Eigen::Index>(approx.data_shape().rows);
    Var theta = tape.constant(approx.theta_standardizer().apply(batch.theta));
    const RealMatrix xs = approx.x_standardizer().apply(batch.x);

    Var emb = guarded("summary network", [&] { return approx.summary().forward(tape, xs); });
    Var post = guarded("posterior network", [&] { return approx.posterior_net().log_prob(tape, theta, emb); });
    Var lik = guarded("likelihood network", [&] {
        const auto& net = approx.likelihood_net();
        Var x = tape.constant(xs);
        switch (approx.data_shape().kind) {
            case DataShape::Kind::set: return net.set_log_prob(tape, x, theta, rows);
            case DataShape::Kind::series: return net.series_log_prob(tape, x, theta, rows);
            case DataShape::Kind::flat: break;
        }
        return net.log_prob(tape, x, theta);
    });

    Var post_nll = ad::add_scalar(ad::neg(ad::mean(post)), -approx.theta_standardizer().log_jacobian());
    Var lik_nll =
        ad::add_scalar(ad::neg(ad::mean(lik)), -static_cast<double>(rows) * approx.x_standardizer().log_jacobian());
    Var total = ad::add(post_nll, lik_nll);

    JointLoss out;
    out.components.posterior_nll = post_nll.scalar();
    out.components.likelihood_nll = lik_nll.scalar();
    if (lambda > 0.0) {
        Var mmd = guarded("summary MMD", [&] { return mmd_penalty(tape, emb, rng); });
        out.components.mmd_term = mmd.scalar();
        total = ad::add(total, ad::scale(mmd, lambda));
    }
    out.components.total = total.scalar();
    require_finite(out.components.posterior_nll, "posterior_nll");
    require_finite(out.components.likelihood_nll, "likelihood_nll");
    require_finite(out.components.mmd_term, "mmd_term");
    out.total = total;
    return out;
}

LossComponents joint_loss(const JointApproximator& approx, const SimulationBatch& batch, double lambda, Rng& rng) {
    Tape tape(Tape::Mode::inference);
    return joint_loss(tape, approx, batch, lambda, rng).components;
}

std::string to_string(Regime r) { return r == Regime::online ? "online" : "offline"; }

Regime regime_from_string(const std::string& s) {
    if (s == "offline") return Regime::offline;
    if (s == "online") return Regime::online;
    throw InvalidArgument("unknown training regime '" + s + "'");
}

void TrainingConfig::validate() const {
    if (budget < 1) throw InvalidArgument("simulation budget must be >= 1");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw InvalidArgument("initial_lr must be > 0");
    if (!(min_lr >= 0.0) || min_lr > initial_lr) throw InvalidArgument("min_lr must lie in [0, initial_lr]");
    if (!(lambda_mmd >= 0.0) || !std::isfinite(lambda_mmd)) throw InvalidArgument("lambda_mmd must be >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw InvalidArgument("weight_decay must be >= 0");
    if (batch_size > budget) throw InvalidArgument("batch_size must not exceed the simulation budget");
    if (!(validation_fraction >= 0.0 && validation_fraction < 0.5))
        throw InvalidArgument("validation_fraction must lie in [0, 0.5)");
    if (lambda_mmd > 0.0 && batch_size < 2) throw InvalidArgument("the MMD term needs batch_size >= 2");
}

std::size_t TrainingConfig::validation_size() const {
    const auto v = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(budget)));
    return std::min(v, budget - 1);
}

std::size_t TrainingConfig::train_size() const { return budget - validation_size(); }

std::size_t TrainingConfig::steps_per_epoch() const { return std::max<std::size_t>(1, train_size() / batch_size); }

namespace {

constexpr Eigen::Index kValidationChunk = 1024;

LossComponents evaluate(const JointApproximator& approx, const SimulationBatch& data, double lambda, Rng rng) {
    LossComponents acc;
    const Eigen::Index n = data.size();
    Eigen::Index start = 0;
    while (start < n) {
        Eigen::Index len = std::min(kValidationChunk, n - start);
        if (n - (start + len) == 1) ++len;  // never leave a single row for the MMD term
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(len));
        std::iota(idx.begin(), idx.end(), start);
        const LossComponents c = joint_loss(approx, data.select(idx), len < 2 ? 0.0 : lambda, rng);
        const double w = static_cast<double>(len) / static_cast<double>(n);
        acc.posterior_nll += w * c.posterior_nll;
        acc.likelihood_nll += w * c.likelihood_nll;
        acc.mmd_term += w * c.mmd_term;
        start += len;
    }
    acc.total = acc.posterior_nll + acc.likelihood_nll + lambda * acc.mmd_term;
    return acc;
}

ParameterPack pack_of(const JointApproximator& a) {
    ParameterPack p;
    for (const auto* t : a.parameters()) p.tensors.push_back(*t);
    return p;
}

bool all_finite(const ParameterPack& p) {
    return std::all_of(p.tensors.begin(), p.tensors.end(), [](const RealMatrix& m) { return m.allFinite(); });
}

using BatchSource = std::function<SimulationBatch(std::size_t epoch, std::size_t step_in_epoch, std::size_t global_step)>;

TrainingResult run(JointApproximator approx, const SimulationBatch& validation, const TrainingConfig& config,
                   std::size_t steps_per_epoch, const BatchSource& next_batch, const EpochCallback& on_epoch) {
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    const CosineSchedule schedule{config.initial_lr, total_steps, config.min_lr};
    ParameterPack params = pack_of(approx);
    OptimizerState state = OptimizerState::init(params, schedule);
    Rng mmd_rng(Rng::derive_seed(config.seed, 5));

    TrainingResult result;
    double best_total = std::numeric_limits<double>::infinity();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_total = 0.0;
        for (std::size_t k = 0; k < steps_per_epoch; ++k, ++step) {
            const SimulationBatch batch = next_batch(epoch, k, step);
            Tape tape;
            JointLoss loss;
            try {
                loss = joint_loss(tape, approx, batch, config.lambda_mmd, mmd_rng);
            } catch (const NonFiniteError& e) {
                throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(), approx,
                                       result.trace);
            }
            tape.backward(loss.total);
            ParameterPack grads;
            for (const auto* p : approx.parameters()) {
                grads.tensors.push_back(tape.grad_of(*p));
                if (config.weight_decay > 0.0) grads.tensors.back() += 2.0 * config.weight_decay * *p;
            }
            const double lr = schedule.at(state.step_count);
            auto [next, next_state] = optimizer_step(std::move(state), params, grads);
            if (!all_finite(next))
                throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": non-finite parameters",
                                       approx, result.trace);
            params = std::move(next);
            state = std::move(next_state);
            auto ptrs = approx.parameters();
            for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = params.tensors[i];
            result.trace.steps.push_back(loss.components);
            result.trace.learning_rates.push_back(lr);
            epoch_total += loss.components.total;
        }
        LossComponents val;
        if (validation.size() > 0) {
            try {
                val = evaluate(approx, validation, config.lambda_mmd,
                               Rng(Rng::derive_seed(Rng::derive_seed(config.seed, 6), epoch)));
            } catch (const NonFiniteError& e) {
                throw TrainingDiverged(std::string("validation loss diverged: ") + e.what(), approx, result.trace);
            }
        } else {
            val.total = epoch_total / static_cast<double>(steps_per_epoch);
        }
        result.trace.validation.push_back(val);
        if (val.total < best_total) {
            best_total = val.total;
            result.best = approx;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(epoch, val);
    }
    result.approximator = std::move(approx);
    return result;
}

std::vector<Eigen::Index> shuffled(std::size_t n, Rng& rng) {
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    return idx;
}

std::vector<Eigen::Index> range(std::size_t begin, std::size_t end) {
    std::vector<Eigen::Index> idx(end - begin);
    std::iota(idx.begin(), idx.end(), static_cast<Eigen::Index>(begin));
    return idx;
}

}  // namespace

TrainingResult train_on(const BayesianModel& model, const SimulationBatch& data, const ApproximatorSpec& spec,
                        const TrainingConfig& config, const EpochCallback& on_epoch) {
    TrainingConfig cfg = config;
    cfg.budget = static_cast<std::size_t>(data.size());
    cfg.regime = Regime::offline;
    cfg.validate();
    if (!(data.shape == model.data_shape)) throw InvalidArgument("simulation data does not match the model's data shape");
    require_cols(data.theta, model.theta_dim, "parameters");

    const std::size_t n_train = cfg.train_size();
    const SimulationBatch train_set = data.select(range(0, n_train));
    const SimulationBatch validation = data.select(range(n_train, cfg.budget));
    JointApproximator approx = JointApproximator::create(model, spec, Standardizer::fit(train_set.theta),
                                                         Standardizer::fit(train_set.x), Rng::derive_seed(cfg.seed, 11));

    const std::size_t steps = cfg.steps_per_epoch();
    const std::size_t b = cfg.batch_size;
    std::vector<Eigen::Index> order;
    BatchSource next = [&](std::size_t epoch, std::size_t k, std::size_t) {
        if (k == 0) {
            Rng rng(Rng::derive_seed(Rng::derive_seed(cfg.seed, 7), epoch));
            order = shuffled(n_train, rng);
        }
        // the last batch of an epoch takes the remainder
        const std::size_t begin = k * b;
        const std::size_t end = (k + 1 == steps) ? n_train : std::min(n_train, begin + b);
        return train_set.select(std::vector<Eigen::Index>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                          order.begin() + static_cast<std::ptrdiff_t>(end)));
    };
    return run(std::move(approx), validation, cfg, steps, next, on_epoch);
}

TrainingResult train(const BayesianModel& model, const ApproximatorSpec& spec, const TrainingConfig& config,
                     const EpochCallback& on_epoch) {
    config.validate();
    if (config.regime == Regime::offline)
        return train_on(model, presimulate(model, config.budget, Rng::derive_seed(config.seed, 1)), spec, config,
                        on_epoch);

    const SimulationBatch validation =
        presimulate(model, config.validation_size(), Rng::derive_seed(config.seed, 2));
    const std::size_t pilot_n = std::clamp<std::size_t>(config.train_size(), 1, 1000);
    const SimulationBatch pilot = presimulate(model, pilot_n, Rng::derive_seed(config.seed, 4));
    JointApproximator approx = JointApproximator::create(model, spec, Standardizer::fit(pilot.theta),
                                                         Standardizer::fit(pilot.x), Rng::derive_seed(config.seed, 11));
    const std::uint64_t stream = Rng::derive_seed(config.seed, 3);
    BatchSource next = [&](std::size_t, std::size_t, std::size_t step) {
        return presimulate(model, config.batch_size, Rng::derive_seed(stream, step));
    };
    return run(std::move(approx), validation, config, config.steps_per_epoch(), next, on_epoch);
}

}  // namespace jana
