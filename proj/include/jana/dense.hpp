#pragma once

#include "jana/core.hpp"
#include "jana/rng.hpp"
#include "jana/tape.hpp"

#include <functional>
#include <string>
#include <vector>

namespace jana {

enum class Activation { tanh, relu, swish };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseNetworkSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_dim = 1;
    Activation activation = Activation::tanh;
    double weight_init_scale = 1.0;

    void validate() const;
};

/// Ordered list of parameter tensors. Networks own theirs by value.
struct ParameterPack {
    std::vector<RealMatrix> tensors;

    std::size_t scalar_count() const;
    /// FNV digest of the raw bytes; equal packs have equal digests.
    std::uint64_t digest() const;
    ParameterPack zeros_like() const;
};

Var apply_activation(Activation a, Var x);

/// Fully connected network: hidden layers use the spec's activation, the
/// output layer is linear. Tensor layout is [W0, b0, W1, b1, ...] with W
/// shaped (fan_in × fan_out) and b shaped (1 × fan_out).
class DenseNetwork {
public:
    DenseNetwork() = default;
    /// Glorot-uniform weights scaled by `weight_init_scale`, zero biases.
    /// With `zero_final` the output layer starts at exactly zero.
    DenseNetwork(DenseNetworkSpec spec, Rng& rng, bool zero_final = false);
    DenseNetwork(DenseNetworkSpec spec, ParameterPack params);

    const DenseNetworkSpec& spec() const noexcept { return spec_; }
    const ParameterPack& params() const noexcept { return params_; }
    ParameterPack& params() noexcept { return params_; }

    Var forward(Tape& tape, Var input) const;
    RealMatrix forward(const RealMatrix& input) const;

private:
    DenseNetworkSpec spec_;
    ParameterPack params_;
};

/// Pure forward pass of a parameter pack laid out as in DenseNetwork.
RealMatrix dense_forward(const DenseNetworkSpec& spec, const ParameterPack& params, const RealMatrix& input);

/// Gradient of a scalar loss with respect to every tensor of `params`. The
/// loss function must bind the tensors through `tape.parameter`.
ParameterPack gradient(const std::function<Var(Tape&, const ParameterPack&)>& loss_fn, const ParameterPack& params);

}  // namespace jana
