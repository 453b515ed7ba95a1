#pragma once

#include "jana/dense.hpp"

#include <vector>

namespace jana {

/// Gated recurrent unit. Tensors: Wx (in × 3H), Wh (H × 3H), bx, bh (1 × 3H),
/// gate blocks ordered [update | reset | candidate].
class GruCell {
public:
    GruCell() = default;
    GruCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t hidden_dim() const noexcept { return hidden_dim_; }

    Var step(Tape& tape, Var input, Var hidden) const;
    /// Zero initial state for `batch` sequences.
    Var initial_state(Tape& tape, Eigen::Index batch) const;

    ParameterPack& params() noexcept { return params_; }
    const ParameterPack& params() const noexcept { return params_; }

private:
    std::size_t input_dim_ = 0;
    std::size_t hidden_dim_ = 0;
    ParameterPack params_;
};

}  // namespace jana
