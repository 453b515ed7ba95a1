#include "jana/latent.hpp"

#include <cmath>
#include <numbers>

namespace jana {

std::string to_string(LatentKind k) { return k == LatentKind::student_t ? "student_t" : "standard_gaussian"; }

LatentKind latent_kind_from_string(const std::string& s) {
    if (s == "standard_gaussian" || s == "gaussian") return LatentKind::standard_gaussian;
    if (s == "student_t") return LatentKind::student_t;
    throw InvalidArgument("unknown latent kind '" + s + "'");
}

void LatentDistribution::validate() const {
    if (dim < 1) throw InvalidArgument("latent dim must be >= 1");
    if (kind == LatentKind::student_t && !(degrees_of_freedom > 0.0))
        throw InvalidArgument("student_t degrees of freedom must be > 0");
}

namespace {

double student_t_const(double df, double d) {
    return std::lgamma(0.5 * (df + d)) - std::lgamma(0.5 * df) - 0.5 * d * std::log(df * std::numbers::pi);
}

}  // namespace

Var LatentDistribution::log_prob(Tape& tape, Var z) const {
    (void)tape;
    if (static_cast<std::size_t>(z.cols()) != dim) throw DimensionError("latent dimension", dim, z.cols());
    const double d = static_cast<double>(dim);
    Var sq = ad::row_sum(ad::square(z));
    if (kind == LatentKind::standard_gaussian)
        return ad::add_scalar(ad::scale(sq, -0.5), -0.5 * d * std::log(2.0 * std::numbers::pi));
    const double df = degrees_of_freedom;
    Var l = ad::log1p(ad::scale(sq, 1.0 / df));
    return ad::add_scalar(ad::scale(l, -0.5 * (df + d)), student_t_const(df, d));
}

RealVector LatentDistribution::log_prob(const RealMatrix& z) const {
    Tape tape(Tape::Mode::inference);
    return log_prob(tape, tape.constant(z)).value().col(0);
}

RealMatrix LatentDistribution::sample(std::size_t n, Rng& rng) const {
    const auto rows = static_cast<Eigen::Index>(n);
    RealMatrix z = rng.normal_matrix(rows, static_cast<Eigen::Index>(dim));
    if (kind == LatentKind::student_t) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double w = std::sqrt(rng.chi_squared(degrees_of_freedom) / degrees_of_freedom);
            z.row(i) /= w;
        }
    }
    return z;
}

}  // namespace jana
