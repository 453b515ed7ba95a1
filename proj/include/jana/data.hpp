#pragma once

#include "jana/core.hpp"

#include <string>

namespace jana {

/// Shape of one data instance. Every instance is stored as a `rows × dim`
/// matrix: flat data has a single row, sets have N rows, series T rows. A
/// batch of B instances is the (B·rows) × dim vertical stack.
struct DataShape {
    enum class Kind { flat, set, series };

    Kind kind = Kind::flat;
    std::size_t rows = 1;
    std::size_t dim = 1;

    static DataShape flat(std::size_t d) { return {Kind::flat, 1, d}; }
    static DataShape set(std::size_t n, std::size_t d) { return {Kind::set, n, d}; }
    static DataShape series(std::size_t t, std::size_t d) { return {Kind::series, t, d}; }

    std::size_t size() const noexcept { return rows * dim; }
    bool operator==(const DataShape&) const = default;

    /// Throws DimensionError unless `instance` is rows × dim.
    void check(const RealMatrix& instance) const;
    /// Throws unless `stacked` holds a whole number of instances; returns that number.
    Eigen::Index count(const RealMatrix& stacked) const;
};

std::string to_string(DataShape::Kind k);
DataShape::Kind data_kind_from_string(const std::string& s);
std::string describe(const DataShape& s);

}  // namespace jana
