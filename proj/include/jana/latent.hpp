#pragma once

#include "jana/core.hpp"
#include "jana/rng.hpp"
#include "jana/tape.hpp"

#include <string>

namespace jana {

enum class LatentKind { standard_gaussian, student_t };

std::string to_string(LatentKind k);
LatentKind latent_kind_from_string(const std::string& s);

/// Base density of a flow: spherical standard Gaussian or multivariate
/// Student-t with `degrees_of_freedom`.
struct LatentDistribution {
    LatentKind kind = LatentKind::standard_gaussian;
    std::size_t dim = 1;
    double degrees_of_freedom = 50.0;

    void validate() const;

    /// Row-wise log density (rows × 1).
    Var log_prob(Tape& tape, Var z) const;
    RealVector log_prob(const RealMatrix& z) const;

    /// Student-t draws are Gaussian / sqrt(chi2_df / df).
    RealMatrix sample(std::size_t n, Rng& rng) const;
};

}  // namespace jana
