#pragma once

#include "jana/dense.hpp"

#include <vector>

namespace jana {

struct CouplingSpec {
    std::size_t dim = 2;
    std::size_t condition_dim = 0;
    std::vector<std::size_t> hidden_widths{64, 64};
    Activation activation = Activation::tanh;
    /// Raw log-scales pass through clamp·tanh(s / clamp).
    double scale_clamp = 1.9;
    double weight_init_scale = 1.0;

    void validate() const;
};

struct CouplingResult {
    Var out;
    Var log_det;  // rows × 1
};

/// Conditional affine coupling.
///
/// Coordinates split into B = [0, dim/2) and A = [dim/2, dim). The first
/// half-update rescales and shifts A given (x_B, condition); the second does
/// the same to B given (z_A, condition). Each half uses one two-headed dense
/// network whose output is [log-scale | shift].
///
/// With dim = 1 there is nothing to split. The layer is then the monotone
/// scalar map z = e^s (x + sum_k a_k tanh(b_k x + c_k)) + t whose coefficients
/// come from the condition, with |a_k b_k| < 0.99 / K. Its inverse is solved
/// by safeguarded Newton iteration and is not differentiable.
class CouplingLayer {
public:
    static constexpr Eigen::Index kScalarUnits = 8;

    CouplingLayer() = default;
    /// The output layer of each subnet starts at zero, so a fresh layer is the identity.
    CouplingLayer(CouplingSpec spec, Rng& rng);

    const CouplingSpec& spec() const noexcept { return spec_; }
    std::size_t a_size() const noexcept { return spec_.dim - b_size(); }
    std::size_t b_size() const noexcept { return spec_.dim / 2; }

    CouplingResult forward(Tape& tape, Var x, Var condition) const;
    CouplingResult inverse(Tape& tape, Var z, Var condition) const;

    DenseNetwork& first() noexcept { return first_; }
    DenseNetwork& second() noexcept { return second_; }
    const DenseNetwork& first() const noexcept { return first_; }
    const DenseNetwork& second() const noexcept { return second_; }
    bool has_second() const noexcept { return b_size() > 0; }

    void collect(std::vector<RealMatrix*>& out);
    void collect(std::vector<const RealMatrix*>& out) const;

private:
    struct Half {
        Var log_scale;
        Var shift;
    };
    struct Scalar {
        Var log_scale, shift, a, b, c;
    };
    Var subnet(Tape& tape, const DenseNetwork& net, Var driver, Var condition) const;
    Half eval(Tape& tape, const DenseNetwork& net, Var driver, Var condition, std::size_t width) const;
    Scalar scalar_params(Tape& tape, Var condition, Eigen::Index rows) const;
    CouplingResult scalar_forward(Tape& tape, Var x, Var condition) const;
    CouplingResult scalar_inverse(Tape& tape, Var z, Var condition) const;

    CouplingSpec spec_;
    DenseNetwork first_;
    DenseNetwork second_;
};

}  // namespace jana
