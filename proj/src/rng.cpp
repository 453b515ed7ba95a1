#include "jana/rng.hpp"

#include <cmath>

namespace jana {

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    // Rejection keeps the draw unbiased for any n.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return r % n;
}

double Rng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

double Rng::gamma(double shape) noexcept {
    // Marsaglia & Tsang; shapes below one are boosted by U^(1/shape).
    if (shape < 1.0) {
        const double g = gamma(shape + 1.0);
        return g * std::pow(uniform_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_open();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::uint64_t Rng::binomial(std::uint64_t n, double p) noexcept {
    if (p <= 0.0) return 0;
    if (p >= 1.0) return n;
    std::uint64_t k = 0;
    for (std::uint64_t i = 0; i < n; ++i) k += uniform() < p ? 1 : 0;
    return k;
}

double Rng::truncated_normal(double mean, double sd, double lo, double hi) noexcept {
    const double a = (lo - mean) / sd;
    const double b = (hi - mean) / sd;
    // Normal proposals are efficient when the window holds a fair share of the mass.
    const double mass = 0.5 * (std::erfc(-b / std::sqrt(2.0)) - std::erfc(-a / std::sqrt(2.0)));
    if (mass > 0.1) {
        for (;;) {
            const double z = normal();
            if (z >= a && z <= b) return mean + sd * z;
        }
    }
    // Uniform proposal with normal-shape acceptance.
    const double peak = (a <= 0.0 && b >= 0.0) ? 0.0 : std::min(a * a, b * b);
    for (;;) {
        const double z = a + (b - a) * uniform();
        if (std::log(uniform_open()) <= -0.5 * (z * z - peak)) return mean + sd * z;
    }
}

RealMatrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    RealMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
}

}  // namespace jana
