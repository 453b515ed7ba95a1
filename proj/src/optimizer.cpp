#include "jana/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace jana {

double CosineSchedule::at(std::size_t step) const {
    if (total_steps == 0 || step >= total_steps) return min_lr;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (initial_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

OptimizerState OptimizerState::init(const ParameterPack& params, CosineSchedule schedule) {
    if (!(schedule.initial_lr > 0.0)) throw InvalidArgument("initial learning rate must be > 0");
    if (schedule.min_lr < 0.0) throw InvalidArgument("min_lr must be >= 0");
    OptimizerState s;
    s.learning_rate = schedule.initial_lr;
    s.first_moment = params.zeros_like();
    s.second_moment = params.zeros_like();
    s.decay_schedule = schedule;
    return s;
}

std::pair<ParameterPack, OptimizerState> optimizer_step(OptimizerState state, ParameterPack params, const ParameterPack& grads) {
    const std::size_t n = params.tensors.size();
    if (grads.tensors.size() != n) throw DimensionError("gradient tensor count", n, grads.tensors.size());
    if (state.first_moment.tensors.size() != n) throw DimensionError("optimizer moment tensor count", n, state.first_moment.tensors.size());

    state.learning_rate = state.decay_schedule.at(state.step_count);
    const double t = static_cast<double>(state.step_count + 1);
    const double c1 = 1.0 - std::pow(OptimizerState::beta1, t);
    const double c2 = 1.0 - std::pow(OptimizerState::beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const RealMatrix& g = grads.tensors[i];
        RealMatrix& p = params.tensors[i];
        if (g.rows() != p.rows() || g.cols() != p.cols()) throw DimensionError("gradient tensor size", p.size(), g.size());
        RealMatrix& m = state.first_moment.tensors[i];
        RealMatrix& v = state.second_moment.tensors[i];
        m = OptimizerState::beta1 * m + (1.0 - OptimizerState::beta1) * g;
        v = OptimizerState::beta2 * v + (1.0 - OptimizerState::beta2) * g.cwiseProduct(g);
        p.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + OptimizerState::epsilon);
    }
    ++state.step_count;
    return {std::move(params), std::move(state)};
}

}  // namespace jana
