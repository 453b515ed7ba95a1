#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace jana {

/// Dense row-major matrix of 64-bit reals. Rows index samples, columns index
/// coordinates, everywhere in the library.
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealVector = Eigen::VectorXd;
using RealRow = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint32_t kFormatVersion = 1;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
        : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)),
          expected_(expected), actual_(actual) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

/// Raised whenever a NaN or Inf shows up; `site()` names the operation.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(std::string site)
        : Error("non-finite value produced at " + site), site_(std::move(site)) {}
    const std::string& site() const noexcept { return site_; }

private:
    std::string site_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IdentifierMismatch : public Error {
public:
    IdentifierMismatch(const std::string& expected, const std::string& actual)
        : Error("model identifier mismatch: checkpoint is for '" + actual + "', requested '" + expected + "'") {}
};

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& site) {
    if (!m.allFinite()) throw NonFiniteError(site);
}

inline void require_finite(double v, const std::string& site) {
    if (!std::isfinite(v)) throw NonFiniteError(site);
}

inline void require_cols(const RealMatrix& m, std::size_t cols, const std::string& what) {
    if (static_cast<std::size_t>(m.cols()) != cols) throw DimensionError(what + " columns", cols, m.cols());
}

inline void require_rows(const RealMatrix& m, std::size_t rows, const std::string& what) {
    if (static_cast<std::size_t>(m.rows()) != rows) throw DimensionError(what + " rows", rows, m.rows());
}

/// Numerically stable log(sum(exp(v))).
inline double log_sum_exp(const double* v, std::size_t n) {
    if (n == 0) return -std::numeric_limits<double>::infinity();
    double m = v[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

inline double log_mean_exp(const std::vector<double>& v) {
    return log_sum_exp(v.data(), v.size()) - std::log(static_cast<double>(v.size()));
}

/// 64-bit FNV-1a; stable across platforms, used for config hashes and parameter digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace jana
