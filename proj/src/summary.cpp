#include "jana/summary.hpp"

#include "jana/flow.hpp"

namespace jana {

std::string to_string(PoolKind p) { return p == PoolKind::mean ? "mean" : "sum"; }

PoolKind pool_kind_from_string(const std::string& s) {
    if (s == "mean") return PoolKind::mean;
    if (s == "sum") return PoolKind::sum;
    throw InvalidArgument("unknown pool '" + s + "'");
}

std::string to_string(SummaryNetwork::Kind k) {
    switch (k) {
        case SummaryNetwork::Kind::identity: return "identity";
        case SummaryNetwork::Kind::deep_set: return "deep_set";
        case SummaryNetwork::Kind::recurrent: return "recurrent";
    }
    return "?";
}

SummaryNetwork::Kind summary_kind_from_string(const std::string& s) {
    if (s == "identity") return SummaryNetwork::Kind::identity;
    if (s == "deep_set") return SummaryNetwork::Kind::deep_set;
    if (s == "recurrent") return SummaryNetwork::Kind::recurrent;
    throw InvalidArgument("unknown summary kind '" + s + "'");
}

void DeepSetSpec::validate() const {
    if (input_dim < 1) throw InvalidArgument("deep set input_dim must be >= 1");
    if (n_equivariant_modules < 1) throw InvalidArgument("deep set needs at least one equivariant module");
    if (summary_dim < 1) throw InvalidArgument("summary_dim must be >= 1");
    if (equivariant_subnet.output_dim < 1) throw InvalidArgument("equivariant width must be >= 1");
}

void RecurrentSummarySpec::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || summary_dim < 1) throw InvalidArgument("recurrent summary dimensions must be >= 1");
}

SummaryNetwork SummaryNetwork::identity(DataShape shape) {
    SummaryNetwork n;
    n.kind_ = Kind::identity;
    n.shape_ = shape;
    n.summary_dim_ = shape.size();
    return n;
}

SummaryNetwork SummaryNetwork::deep_set(DataShape shape, DeepSetSpec spec, Rng& rng) {
    if (shape.kind != DataShape::Kind::set) throw InvalidArgument("deep_set summary needs set-shaped data");
    spec.input_dim = shape.dim;
    spec.validate();
    SummaryNetwork n;
    n.kind_ = Kind::deep_set;
    n.shape_ = shape;
    n.summary_dim_ = spec.summary_dim;
    const std::size_t w = spec.equivariant_subnet.output_dim;
    std::size_t width = spec.input_dim;
    for (std::size_t m = 0; m < spec.n_equivariant_modules; ++m) {
        DenseNetworkSpec phi = spec.equivariant_subnet;
        phi.input_dim = width;
        DenseNetworkSpec psi = spec.equivariant_subnet;
        psi.input_dim = width + w;
        n.phi_.emplace_back(phi, rng);
        n.psi_.emplace_back(psi, rng);
        width = w;
    }
    spec.post_pool_subnet.input_dim = w;
    spec.post_pool_subnet.output_dim = spec.summary_dim;
    n.rho_ = DenseNetwork(spec.post_pool_subnet, rng);
    n.deep_set_ = std::move(spec);
    return n;
}

SummaryNetwork SummaryNetwork::recurrent(DataShape shape, RecurrentSummarySpec spec, Rng& rng) {
    if (shape.kind != DataShape::Kind::series) throw InvalidArgument("recurrent summary needs series-shaped data");
    spec.input_dim = shape.dim;
    spec.validate();
    SummaryNetwork n;
    n.kind_ = Kind::recurrent;
    n.shape_ = shape;
    n.summary_dim_ = spec.summary_dim;
    n.gru_ = GruCell(spec.input_dim, spec.hidden_dim, rng);
    n.rho_ = DenseNetwork(DenseNetworkSpec{spec.hidden_dim, {}, spec.summary_dim, Activation::tanh, 1.0}, rng);
    n.recurrent_ = spec;
    return n;
}

RealMatrix canonicalize_sets(const RealMatrix& stacked, Eigen::Index set_size) {
    RealMatrix out(stacked.rows(), stacked.cols());
    for (Eigen::Index b = 0; b * set_size < stacked.rows(); ++b) {
        const RealMatrix block = stacked.middleRows(b * set_size, set_size);
        const auto order = canonical_row_order(block);
        for (Eigen::Index i = 0; i < set_size; ++i) out.row(b * set_size + i) = block.row(order[static_cast<std::size_t>(i)]);
    }
    return out;
}

Var SummaryNetwork::forward(Tape& tape, const RealMatrix& stacked) const {
    if (stacked.rows() == 0) throw InvalidArgument("cannot summarize an empty batch");
    const Eigen::Index batch = shape_.count(stacked);
    const auto n = static_cast<Eigen::Index>(shape_.rows);
    switch (kind_) {
        case Kind::identity: {
            RealMatrix flat(batch, static_cast<Eigen::Index>(shape_.size()));
            for (Eigen::Index b = 0; b < batch; ++b)
                flat.row(b) = Eigen::Map<const RealRow>(stacked.row(b * n).data(), flat.cols());
            return tape.constant(std::move(flat));
        }
        case Kind::deep_set: return forward_sets(tape, stacked, n);
        case Kind::recurrent: {
            Var x = tape.constant(stacked);
            Var h = gru_.initial_state(tape, batch);
            std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
            for (Eigen::Index t = 0; t < n; ++t) {
                for (Eigen::Index b = 0; b < batch; ++b) idx[static_cast<std::size_t>(b)] = b * n + t;
                h = gru_.step(tape, ad::gather_rows(x, idx), h);
            }
            return rho_.forward(tape, h);
        }
    }
    throw InvalidArgument("bad summary kind");
}

std::vector<RealMatrix*> SummaryNetwork::parameters() {
    std::vector<RealMatrix*> out;
    for (std::size_t m = 0; m < phi_.size(); ++m) {
        for (auto& t : phi_[m].params().tensors) out.push_back(&t);
        for (auto& t : psi_[m].params().tensors) out.push_back(&t);
    }
    if (kind_ == Kind::recurrent)
        for (auto& t : gru_.params().tensors) out.push_back(&t);
    if (kind_ != Kind::identity)
        for (auto& t : rho_.params().tensors) out.push_back(&t);
    return out;
}

std::vector<const RealMatrix*> SummaryNetwork::parameters() const {
    std::vector<const RealMatrix*> out;
    for (RealMatrix* p : const_cast<SummaryNetwork*>(this)->parameters()) out.push_back(p);
    return out;
}

Var SummaryNetwork::forward_sets(Tape& tape, const RealMatrix& stacked, Eigen::Index n) const {
    if (kind_ != Kind::deep_set) throw InvalidArgument("forward_sets needs a deep_set summary");
    if (n < 1 || stacked.rows() == 0 || stacked.rows() % n != 0)
        throw DimensionError("stacked set rows (multiple of)", static_cast<std::size_t>(std::max<Eigen::Index>(n, 1)), stacked.rows());
    require_cols(stacked, shape_.dim, "set columns");
    auto pool = [&](Var v) {
        return deep_set_.invariant_pool == PoolKind::mean ? ad::group_mean_rows(v, n) : ad::group_sum_rows(v, n);
    };
    Var h = tape.constant(canonicalize_sets(stacked, n));
    for (std::size_t m = 0; m < phi_.size(); ++m) {
        Var inv = ad::repeat_rows(pool(phi_[m].forward(tape, h)), n);
        const Var parts[] = {h, inv};
        h = psi_[m].forward(tape, ad::concat_cols(parts));
    }
    return rho_.forward(tape, pool(h));
}

RealRow summarize(const SummaryNetwork& net, const RealMatrix& instance) {
    if (instance.rows() == 0) throw InvalidArgument("cannot summarize an empty " + to_string(net.shape().kind));
    net.shape().check(instance);
    return summarize_batch(net, instance).row(0);
}

RealMatrix summarize_batch(const SummaryNetwork& net, const RealMatrix& stacked) {
    Tape tape(Tape::Mode::inference);
    return net.forward(tape, stacked).value();
}

Var mixture_kernel(Var a, Var b) {
    Var d2 = ad::sqdist(a, b);
    Var k;
    for (double h : kKernelBandwidths) {
        Var term = ad::exp(ad::scale(d2, -0.5 / (h * h)));
        k = k.valid() ? ad::add(k, term) : term;
    }
    return ad::scale(k, 1.0 / static_cast<double>(std::size(kKernelBandwidths)));
}

Var mmd2_unbiased(Var x, Var y) {
    const double n = static_cast<double>(x.rows());
    const double m = static_cast<double>(y.rows());
    if (x.rows() < 2 || y.rows() < 2) throw InvalidArgument("MMD needs at least two rows per sample");
    if (x.cols() != y.cols()) throw DimensionError("MMD sample dimension", static_cast<std::size_t>(x.cols()), y.cols());
    // k(a, a) = 1, so the off-diagonal sum is sum(K) - n.
    Var kxx = ad::add_scalar(ad::sum(mixture_kernel(x, x)), -n);
    Var kyy = ad::add_scalar(ad::sum(mixture_kernel(y, y)), -m);
    Var kxy = ad::sum(mixture_kernel(x, y));
    return ad::add(ad::add(ad::scale(kxx, 1.0 / (n * (n - 1))), ad::scale(kyy, 1.0 / (m * (m - 1)))),
                   ad::scale(kxy, -2.0 / (n * m)));
}

double mmd2_unbiased(const RealMatrix& x, const RealMatrix& y) {
    Tape tape(Tape::Mode::inference);
    return mmd2_unbiased(tape.constant(x), tape.constant(y)).scalar();
}

Var mmd_penalty(Tape& tape, Var embeddings, Rng& rng) {
    if (embeddings.rows() < 2) throw InvalidArgument("MMD penalty needs at least two embeddings");
    Var reference = tape.constant(rng.normal_matrix(embeddings.rows(), embeddings.cols()));
    return mmd2_unbiased(embeddings, reference);
}

double mmd_penalty(const RealMatrix& embeddings, Rng& rng) {
    Tape tape(Tape::Mode::inference);
    return mmd_penalty(tape, tape.constant(embeddings), rng).scalar();
}

}  // namespace jana
