#pragma once

#include "jana/core.hpp"

#include <cstdint>

namespace jana {

/// Counter-based pseudo random generator (SplitMix64 over a 64-bit counter).
///
/// Every distribution is implemented here from raw 64-bit words, so a seed
/// yields the same stream on every platform and standard library. `split`
/// derives independent child streams by hashing (seed, stream id), which is how
/// per-row and per-worker generators are obtained.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept { return mix(seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_int(std::uint64_t n) noexcept;

    double normal() noexcept;
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    double gamma(double shape) noexcept;
    double chi_squared(double df) noexcept { return 2.0 * gamma(0.5 * df); }

    bool bernoulli(double p) noexcept { return uniform() < p; }
    std::uint64_t binomial(std::uint64_t n, double p) noexcept;

    /// Normal(mean, sd) restricted to [lo, hi], by rejection (falls back to
    /// uniform proposals when the interval holds little normal mass).
    double truncated_normal(double mean, double sd, double lo, double hi) noexcept;

    RealMatrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

    /// Child generator for stream `stream`; independent of how many draws the
    /// parent has consumed.
    Rng split(std::uint64_t stream) const noexcept { return Rng(derive_seed(seed_, stream)); }

    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
        return mix(mix(seed ^ 0xD1B54A32D192ED03ULL) + mix(stream + 0x8CB92BA72F3D8DD7ULL));
    }

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace jana
