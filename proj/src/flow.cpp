#include "jana/flow.hpp"

#include <algorithm>
#include <numeric>

namespace jana {

std::string to_string(FlowVariant v) {
    switch (v) {
        case FlowVariant::vanilla: return "vanilla";
        case FlowVariant::exchangeable: return "exchangeable";
        case FlowVariant::markovian: return "markovian";
    }
    return "?";
}

FlowVariant flow_variant_from_string(const std::string& s) {
    if (s == "vanilla") return FlowVariant::vanilla;
    if (s == "exchangeable") return FlowVariant::exchangeable;
    if (s == "markovian") return FlowVariant::markovian;
    throw InvalidArgument("unknown flow variant '" + s + "'");
}

void FlowSpec::validate() const {
    if (dim < 1) throw InvalidArgument("flow dim must be >= 1");
    if (n_couplings < 1) throw InvalidArgument("flow needs at least one coupling layer");
    if (variant == FlowVariant::markovian && memory_hidden < 1) throw InvalidArgument("markovian flow needs memory_hidden >= 1");
}

ConditionalInvertibleNetwork::ConditionalInvertibleNetwork(FlowSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    latent_ = LatentDistribution{spec_.latent, spec_.dim, spec_.latent_df};
    latent_.validate();
    Rng root(spec_.seed);
    Rng init = root.split(1);
    Rng shuffle = root.split(2);
    CouplingSpec cs;
    cs.dim = spec_.dim;
    cs.condition_dim = coupling_condition_dim();
    cs.hidden_widths = spec_.hidden_widths;
    cs.activation = spec_.activation;
    cs.scale_clamp = spec_.scale_clamp;
    cs.weight_init_scale = spec_.weight_init_scale;
    for (std::size_t l = 0; l < spec_.n_couplings; ++l) {
        layers_.emplace_back(cs, init);
        std::vector<Eigen::Index> p(spec_.dim);
        std::iota(p.begin(), p.end(), 0);
        if (l > 0)
            for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[shuffle.uniform_int(i)]);
        std::vector<Eigen::Index> inv(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<Eigen::Index>(i);
        perms_.push_back(std::move(p));
        inverse_perms_.push_back(std::move(inv));
    }
    // Undo the accumulated shuffle after the last layer so a fresh network is the identity.
    std::vector<Eigen::Index> order(spec_.dim);
    std::iota(order.begin(), order.end(), 0);
    for (const auto& p : perms_) {
        std::vector<Eigen::Index> next(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) next[i] = order[static_cast<std::size_t>(p[i])];
        order = std::move(next);
    }
    shuffled_order_ = order;
    restore_order_.resize(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) restore_order_[static_cast<std::size_t>(order[i])] = static_cast<Eigen::Index>(i);
    if (spec_.variant == FlowVariant::markovian) memory_ = GruCell(spec_.condition_dim + spec_.dim, spec_.memory_hidden, init);
}

std::size_t ConditionalInvertibleNetwork::coupling_condition_dim() const noexcept {
    return spec_.condition_dim + (spec_.variant == FlowVariant::markovian ? spec_.memory_hidden : 0);
}

FlowPass ConditionalInvertibleNetwork::forward(Tape& tape, Var target, Var coupling_condition) const {
    if (static_cast<std::size_t>(target.cols()) != spec_.dim) throw DimensionError("flow target dimension", spec_.dim, target.cols());
    Var x = target;
    Var log_det = tape.constant(RealMatrix::Zero(target.rows(), 1));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (l > 0) x = ad::gather_cols(x, perms_[l]);
        try {
            CouplingResult r = layers_[l].forward(tape, x, coupling_condition);
            x = r.out;
            log_det = ad::add(log_det, r.log_det);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("coupling layer " + std::to_string(l) + " (" + e.site() + ")");
        }
    }
    return {ad::gather_cols(x, restore_order_), log_det};
}

FlowPass ConditionalInvertibleNetwork::inverse(Tape& tape, Var z, Var coupling_condition) const {
    if (static_cast<std::size_t>(z.cols()) != spec_.dim) throw DimensionError("flow latent dimension", spec_.dim, z.cols());
    Var x = ad::gather_cols(z, shuffled_order_);
    Var log_det = tape.constant(RealMatrix::Zero(z.rows(), 1));
    for (std::size_t k = layers_.size(); k-- > 0;) {
        try {
            CouplingResult r = layers_[k].inverse(tape, x, coupling_condition);
            x = r.out;
            log_det = ad::add(log_det, r.log_det);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("coupling layer " + std::to_string(k) + " inverse (" + e.site() + ")");
        }
        if (k > 0) x = ad::gather_cols(x, inverse_perms_[k]);
    }
    return {x, log_det};
}

Var ConditionalInvertibleNetwork::log_prob(Tape& tape, Var target, Var coupling_condition) const {
    FlowPass p = forward(tape, target, coupling_condition);
    return ad::add(latent_.log_prob(tape, p.out), p.log_det);
}

Var ConditionalInvertibleNetwork::condition_rows(Tape& tape, Var condition, Eigen::Index rows) const {
    (void)tape;
    if (condition.rows() == rows) return condition;
    if (condition.rows() == 1) return ad::repeat_rows(condition, rows);
    throw DimensionError("condition rows", static_cast<std::size_t>(rows), condition.rows());
}

Var ConditionalInvertibleNetwork::set_log_prob(Tape& tape, Var rows, Var condition, Eigen::Index set_size) const {
    if (set_size < 1) throw InvalidArgument("set size must be >= 1");
    if (rows.rows() != condition.rows() * set_size)
        throw DimensionError("set rows", static_cast<std::size_t>(condition.rows() * set_size), rows.rows());
    Var cond = ad::repeat_rows(condition, set_size);
    return ad::group_sum_rows(log_prob(tape, rows, cond), set_size);
}

Var ConditionalInvertibleNetwork::series_log_prob(Tape& tape, Var rows, Var condition, Eigen::Index length) const {
    if (spec_.variant != FlowVariant::markovian) throw InvalidArgument("series_log_prob requires a markovian network");
    if (length < 1) throw InvalidArgument("series length must be >= 1");
    const Eigen::Index batch = condition.rows();
    if (rows.rows() != batch * length) throw DimensionError("series rows", static_cast<std::size_t>(batch * length), rows.rows());
    Var h = memory_.initial_state(tape, batch);
    std::vector<Var> previous;
    previous.reserve(static_cast<std::size_t>(length));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
    for (Eigen::Index t = 0; t < length; ++t) {
        previous.push_back(h);
        if (t + 1 == length) break;  // the final state conditions nothing
        for (Eigen::Index b = 0; b < batch; ++b) idx[static_cast<std::size_t>(b)] = b * length + t;
        Var xt = ad::gather_rows(rows, idx);
        const Var parts[] = {condition, xt};
        h = memory_.step(tape, ad::concat_cols(parts), h);
    }
    Var hist = ad::interleave_rows(previous);
    const Var parts[] = {ad::repeat_rows(condition, length), hist};
    Var cond = ad::concat_cols(parts);
    return ad::group_sum_rows(log_prob(tape, rows, cond), length);
}

RealMatrix ConditionalInvertibleNetwork::sample_rows(const RealMatrix& coupling_condition, Rng& rng) const {
    Tape tape(Tape::Mode::inference);
    RealMatrix z = latent_.sample(static_cast<std::size_t>(coupling_condition.rows()), rng);
    return inverse(tape, tape.constant(std::move(z)), tape.constant(coupling_condition)).out.value();
}

RealMatrix ConditionalInvertibleNetwork::sample_series(const RealMatrix& condition, Eigen::Index length, Rng& rng) const {
    if (spec_.variant != FlowVariant::markovian) throw InvalidArgument("sample_series requires a markovian network");
    const Eigen::Index batch = condition.rows();
    const auto d = static_cast<Eigen::Index>(spec_.dim);
    RealMatrix out(batch * length, d);
    Tape tape(Tape::Mode::inference);
    Var cond = tape.constant(condition);
    Var h = memory_.initial_state(tape, batch);
    for (Eigen::Index t = 0; t < length; ++t) {
        try {
            const Var cparts[] = {cond, h};
            Var full = ad::concat_cols(cparts);
            Var z = tape.constant(latent_.sample(static_cast<std::size_t>(batch), rng));
            Var xt = inverse(tape, z, full).out;
            for (Eigen::Index b = 0; b < batch; ++b) out.row(b * length + t) = xt.value().row(b);
            if (t + 1 < length) {
                const Var parts[] = {cond, xt};
                h = memory_.step(tape, ad::concat_cols(parts), h);
            }
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("markovian sample step " + std::to_string(t) + " (" + e.site() + ")");
        }
    }
    return out;
}

std::vector<RealMatrix*> ConditionalInvertibleNetwork::parameters() {
    std::vector<RealMatrix*> out;
    for (auto& l : layers_) l.collect(out);
    if (spec_.variant == FlowVariant::markovian)
        for (auto& t : memory_.params().tensors) out.push_back(&t);
    return out;
}

std::vector<const RealMatrix*> ConditionalInvertibleNetwork::parameters() const {
    std::vector<const RealMatrix*> out;
    for (const auto& l : layers_) l.collect(out);
    if (spec_.variant == FlowVariant::markovian)
        for (const auto& t : memory_.params().tensors) out.push_back(&t);
    return out;
}

RealVector flow_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& target, const RealMatrix& condition) {
    require_cols(target, net.spec().dim, "flow target");
    require_cols(condition, net.coupling_condition_dim(), "flow condition");
    Tape tape(Tape::Mode::inference);
    Var cond = tape.constant(condition);
    if (condition.rows() != target.rows()) {
        if (condition.rows() != 1) throw DimensionError("flow condition rows", target.rows(), condition.rows());
        cond = ad::repeat_rows(cond, std::max<Eigen::Index>(target.rows(), 1));
    }
    if (target.rows() == 0) return RealVector(0);
    return net.log_prob(tape, tape.constant(target), cond).value().col(0);
}

RealMatrix flow_sample(const ConditionalInvertibleNetwork& net, const RealRow& condition, std::size_t n_draws, Rng& rng) {
    if (static_cast<std::size_t>(condition.cols()) != net.coupling_condition_dim())
        throw DimensionError("flow condition", net.coupling_condition_dim(), condition.cols());
    if (n_draws == 0) return RealMatrix(0, static_cast<Eigen::Index>(net.spec().dim));
    RealMatrix cond = condition.replicate(static_cast<Eigen::Index>(n_draws), 1);
    return net.sample_rows(cond, rng);
}

std::vector<Eigen::Index> canonical_row_order(const RealMatrix& rows) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&rows](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) {
            if (rows(a, j) < rows(b, j)) return true;
            if (rows(b, j) < rows(a, j)) return false;
        }
        return false;
    });
    return order;
}

double exchangeable_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& x_set, const RealRow& theta) {
    if (net.spec().variant != FlowVariant::exchangeable) throw InvalidArgument("exchangeable_log_prob requires an exchangeable network");
    require_cols(x_set, net.spec().dim, "observation");
    if (static_cast<std::size_t>(theta.cols()) != net.spec().condition_dim)
        throw DimensionError("parameter dimension", net.spec().condition_dim, theta.cols());
    if (x_set.rows() == 0) return 0.0;
    const auto order = canonical_row_order(x_set);
    RealMatrix sorted(x_set.rows(), x_set.cols());
    for (std::size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = x_set.row(order[i]);
    const RealVector lp = flow_log_prob(net, sorted, theta);
    double total = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) total += lp(i);
    return total;
}

RealVector markovian_step_log_probs(const ConditionalInvertibleNetwork& net, const RealMatrix& series, const RealRow& theta) {
    if (net.spec().variant != FlowVariant::markovian) throw InvalidArgument("markovian_log_prob requires a markovian network");
    require_cols(series, net.spec().dim, "series");
    if (series.rows() < 1) throw InvalidArgument("series must have at least one step");
    if (static_cast<std::size_t>(theta.cols()) != net.spec().condition_dim)
        throw DimensionError("parameter dimension", net.spec().condition_dim, theta.cols());
    // Same assembly as series_log_prob, kept per step.
    Tape tape(Tape::Mode::inference);
    const Eigen::Index T = series.rows();
    Var cond = tape.constant(RealMatrix(theta));
    Var h = net.memory().initial_state(tape, 1);
    std::vector<Var> previous;
    for (Eigen::Index t = 0; t < T; ++t) {
        previous.push_back(h);
        if (t + 1 == T) break;
        const Var parts[] = {cond, tape.constant(RealMatrix(series.row(t)))};
        h = net.memory().step(tape, ad::concat_cols(parts), h);
    }
    Var hist = ad::interleave_rows(previous);
    const Var parts[] = {ad::repeat_rows(cond, T), hist};
    return net.log_prob(tape, tape.constant(series), ad::concat_cols(parts)).value().col(0);
}

double markovian_log_prob(const ConditionalInvertibleNetwork& net, const RealMatrix& series, const RealRow& theta) {
    return markovian_step_log_probs(net, series, theta).sum();
}

RealMatrix markovian_sample(const ConditionalInvertibleNetwork& net, const RealRow& theta, std::size_t length, Rng& rng) {
    if (static_cast<std::size_t>(theta.cols()) != net.spec().condition_dim)
        throw DimensionError("parameter dimension", net.spec().condition_dim, theta.cols());
    if (length == 0) return RealMatrix(0, static_cast<Eigen::Index>(net.spec().dim));
    return net.sample_series(RealMatrix(theta), static_cast<Eigen::Index>(length), rng);
}

}  // namespace jana
