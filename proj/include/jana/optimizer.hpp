#pragma once

#include "jana/dense.hpp"

#include <utility>

namespace jana {

/// Cosine decay from `initial_lr` to `min_lr` over `total_steps`; constant at
/// `min_lr` afterwards.
struct CosineSchedule {
    double initial_lr = 1e-3;
    std::size_t total_steps = 1;
    double min_lr = 0.0;

    double at(std::size_t step) const;
};

/// Adam state. Moments are shaped like the parameters they track.
struct OptimizerState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    double learning_rate = 1e-3;
    ParameterPack first_moment;
    ParameterPack second_moment;
    std::size_t step_count = 0;
    CosineSchedule decay_schedule;

    static OptimizerState init(const ParameterPack& params, CosineSchedule schedule);
};

/// One Adam update. The learning rate for update t (0-based) is
/// schedule.at(t); step_count is incremented.
std::pair<ParameterPack, OptimizerState> optimizer_step(OptimizerState state, ParameterPack params, const ParameterPack& grads);

}  // namespace jana
