#include "jana/dense.hpp"

#include <cmath>

namespace jana {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::swish: return "swish";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "swish") return Activation::swish;
    throw InvalidArgument("unknown activation '" + s + "'");
}

void DenseNetworkSpec::validate() const {
    if (input_dim < 1) throw InvalidArgument("dense network input_dim must be >= 1");
    if (output_dim < 1) throw InvalidArgument("dense network output_dim must be >= 1");
    for (auto w : hidden_widths)
        if (w < 1) throw InvalidArgument("dense network hidden widths must be >= 1");
    if (!(weight_init_scale > 0.0)) throw InvalidArgument("weight_init_scale must be > 0");
}

std::size_t ParameterPack::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
}

std::uint64_t ParameterPack::digest() const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const auto& t : tensors) {
        const Eigen::Index shape[2] = {t.rows(), t.cols()};
        h = fnv1a(shape, sizeof(shape), h);
        h = fnv1a(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()), h);
    }
    return h;
}

ParameterPack ParameterPack::zeros_like() const {
    ParameterPack z;
    z.tensors.reserve(tensors.size());
    for (const auto& t : tensors) z.tensors.push_back(RealMatrix::Zero(t.rows(), t.cols()));
    return z;
}

Var apply_activation(Activation a, Var x) {
    switch (a) {
        case Activation::tanh: return ad::tanh(x);
        case Activation::relu: return ad::relu(x);
        case Activation::swish: return ad::swish(x);
    }
    return x;
}

DenseNetwork::DenseNetwork(DenseNetworkSpec spec, Rng& rng, bool zero_final) : spec_(std::move(spec)) {
    spec_.validate();
    std::vector<std::size_t> dims{spec_.input_dim};
    dims.insert(dims.end(), spec_.hidden_widths.begin(), spec_.hidden_widths.end());
    dims.push_back(spec_.output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto fan_in = static_cast<Eigen::Index>(dims[l]);
        const auto fan_out = static_cast<Eigen::Index>(dims[l + 1]);
        RealMatrix w(fan_in, fan_out);
        const bool last = l + 2 == dims.size();
        if (last && zero_final) {
            w.setZero();
        } else {
            const double bound = spec_.weight_init_scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (Eigen::Index i = 0; i < fan_in; ++i)
                for (Eigen::Index j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-bound, bound);
        }
        params_.tensors.push_back(std::move(w));
        params_.tensors.push_back(RealMatrix::Zero(1, fan_out));
    }
}

DenseNetwork::DenseNetwork(DenseNetworkSpec spec, ParameterPack params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    const std::size_t layers = spec_.hidden_widths.size() + 1;
    if (params_.tensors.size() != 2 * layers) throw DimensionError("dense network tensor count", 2 * layers, params_.tensors.size());
    std::size_t fan_in = spec_.input_dim;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t fan_out = l + 1 == layers ? spec_.output_dim : spec_.hidden_widths[l];
        require_rows(params_.tensors[2 * l], fan_in, "dense weight");
        require_cols(params_.tensors[2 * l], fan_out, "dense weight");
        require_rows(params_.tensors[2 * l + 1], 1, "dense bias");
        require_cols(params_.tensors[2 * l + 1], fan_out, "dense bias");
        fan_in = fan_out;
    }
}

Var DenseNetwork::forward(Tape& tape, Var input) const {
    if (static_cast<std::size_t>(input.cols()) != spec_.input_dim)
        throw DimensionError("dense network input dimension", spec_.input_dim, input.cols());
    const std::size_t layers = params_.tensors.size() / 2;
    Var h = input;
    for (std::size_t l = 0; l < layers; ++l) {
        Var w = tape.parameter(params_.tensors[2 * l]);
        Var b = tape.parameter(params_.tensors[2 * l + 1]);
        h = ad::add_row(ad::matmul(h, w), b);
        if (l + 1 < layers) h = apply_activation(spec_.activation, h);
    }
    return h;
}

RealMatrix DenseNetwork::forward(const RealMatrix& input) const {
    Tape tape(Tape::Mode::inference);
    return forward(tape, tape.constant(input)).value();
}

RealMatrix dense_forward(const DenseNetworkSpec& spec, const ParameterPack& params, const RealMatrix& input) {
    return DenseNetwork(spec, params).forward(input);
}

ParameterPack gradient(const std::function<Var(Tape&, const ParameterPack&)>& loss_fn, const ParameterPack& params) {
    Tape tape;
    for (const auto& t : params.tensors) tape.parameter(t);
    Var loss = loss_fn(tape, params);
    tape.backward(loss);
    ParameterPack g;
    for (const auto& t : params.tensors) g.tensors.push_back(tape.grad_of(t));
    return g;
}

}  // namespace jana
