#include "jana/data.hpp"

namespace jana {

void DataShape::check(const RealMatrix& instance) const {
    if (static_cast<std::size_t>(instance.rows()) != rows) throw DimensionError(describe(*this) + " rows", rows, instance.rows());
    if (static_cast<std::size_t>(instance.cols()) != dim) throw DimensionError(describe(*this) + " columns", dim, instance.cols());
}

Eigen::Index DataShape::count(const RealMatrix& stacked) const {
    if (static_cast<std::size_t>(stacked.cols()) != dim) throw DimensionError(describe(*this) + " columns", dim, stacked.cols());
    const auto r = static_cast<Eigen::Index>(rows);
    if (stacked.rows() % r != 0) throw DimensionError(describe(*this) + " stacked rows (multiple of)", rows, stacked.rows());
    return stacked.rows() / r;
}

std::string to_string(DataShape::Kind k) {
    switch (k) {
        case DataShape::Kind::flat: return "flat";
        case DataShape::Kind::set: return "set";
        case DataShape::Kind::series: return "series";
    }
    return "?";
}

DataShape::Kind data_kind_from_string(const std::string& s) {
    if (s == "flat") return DataShape::Kind::flat;
    if (s == "set") return DataShape::Kind::set;
    if (s == "series") return DataShape::Kind::series;
    throw InvalidArgument("unknown data kind '" + s + "'");
}

std::string describe(const DataShape& s) {
    if (s.kind == DataShape::Kind::flat) return "flat(" + std::to_string(s.dim) + ")";
    return to_string(s.kind) + "(" + std::to_string(s.rows) + ", " + std::to_string(s.dim) + ")";
}

}  // namespace jana
