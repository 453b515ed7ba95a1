#include "jana/gru.hpp"

#include <cmath>

namespace jana {

GruCell::GruCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    if (input_dim < 1 || hidden_dim < 1) throw InvalidArgument("GRU dimensions must be >= 1");
    const auto in = static_cast<Eigen::Index>(input_dim);
    const auto h = static_cast<Eigen::Index>(hidden_dim);
    auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + fan_out));
        RealMatrix w(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
        return w;
    };
    params_.tensors.push_back(glorot(in, 3 * h, h));
    params_.tensors.push_back(glorot(h, 3 * h, h));
    params_.tensors.push_back(RealMatrix::Zero(1, 3 * h));
    params_.tensors.push_back(RealMatrix::Zero(1, 3 * h));
}

Var GruCell::initial_state(Tape& tape, Eigen::Index batch) const {
    return tape.constant(RealMatrix::Zero(batch, static_cast<Eigen::Index>(hidden_dim_)));
}

Var GruCell::step(Tape& tape, Var input, Var hidden) const {
    if (static_cast<std::size_t>(input.cols()) != input_dim_) throw DimensionError("GRU input dimension", input_dim_, input.cols());
    const auto h = static_cast<Eigen::Index>(hidden_dim_);
    Var wx = tape.parameter(params_.tensors[0]);
    Var wh = tape.parameter(params_.tensors[1]);
    Var bx = tape.parameter(params_.tensors[2]);
    Var bh = tape.parameter(params_.tensors[3]);
    Var a = ad::add_row(ad::matmul(input, wx), bx);
    Var b = ad::add_row(ad::matmul(hidden, wh), bh);
    Var update = ad::sigmoid(ad::add(ad::slice_cols(a, 0, h), ad::slice_cols(b, 0, h)));
    Var reset = ad::sigmoid(ad::add(ad::slice_cols(a, h, h), ad::slice_cols(b, h, h)));
    Var cand = ad::tanh(ad::add(ad::slice_cols(a, 2 * h, h), ad::mul(reset, ad::slice_cols(b, 2 * h, h))));
    // h' = (1 - u) * cand + u * h
    return ad::add(cand, ad::mul(update, ad::sub(hidden, cand)));
}

}  // namespace jana
