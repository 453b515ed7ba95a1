#include "jana/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace jana {

using nlohmann::json;

DatasetMetadata dataset_metadata(const BayesianModel& model, const SimulationBatch& batch, std::uint64_t seed) {
    DatasetMetadata m;
    m.model = model.name;
    m.theta_dim = model.theta_dim;
    m.shape = model.data_shape;
    m.constants = model.constants;
    m.dt = model.dt;
    m.seed = seed;
    m.n_rows = static_cast<std::size_t>(batch.size());
    return m;
}

namespace {

json row_to_json(const RealRow& r) {
    json a = json::array();
    for (Eigen::Index i = 0; i < r.cols(); ++i) a.push_back(r(i));
    return a;
}

RealRow json_to_row(const json& a, std::size_t expected, const std::string& what) {
    if (!a.is_array()) throw FormatError(what + " must be an array");
    if (a.size() != expected) throw DimensionError(what, expected, a.size());
    RealRow r(static_cast<Eigen::Index>(expected));
    for (std::size_t i = 0; i < expected; ++i) {
        if (!a[i].is_number()) throw FormatError(what + " entries must be numbers");
        r(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    }
    return r;
}

}  // namespace

void write_dataset(std::ostream& out, const DatasetMetadata& meta, const SimulationBatch& batch) {
    json head = {{"format_version", meta.format_version},
                 {"model", meta.model},
                 {"dims", {{"theta", meta.theta_dim}, {"x_kind", to_string(meta.shape.kind)}, {"x_rows", meta.shape.rows}, {"x_dim", meta.shape.dim}}},
                 {"constants", meta.constants},
                 {"dt", meta.dt},
                 {"seed", meta.seed},
                 {"n_rows", meta.n_rows},
                 {"config_hash", meta.config_hash},
                 {"created", meta.created}};
    out << head.dump() << '\n';
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        json x;
        const RealMatrix inst = batch.instance(i);
        if (batch.shape.kind == DataShape::Kind::flat) {
            x = row_to_json(inst.row(0));
        } else {
            x = json::array();
            for (Eigen::Index r = 0; r < inst.rows(); ++r) x.push_back(row_to_json(inst.row(r)));
        }
        json rec = {{"theta", row_to_json(batch.theta.row(i))}, {"x", x}, {"seed", batch.seeds[static_cast<std::size_t>(i)]}};
        out << rec.dump() << '\n';
    }
}

void write_dataset(const std::string& path, const DatasetMetadata& meta, const SimulationBatch& batch) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    write_dataset(f, meta, batch);
    if (!f) throw Error("failed writing '" + path + "'");
}

std::pair<DatasetMetadata, SimulationBatch> read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("dataset is empty");
    DatasetMetadata m;
    try {
        const json head = json::parse(line);
        if (!head.contains("format_version")) throw FormatError("dataset metadata lacks format_version");
        m.format_version = head.at("format_version").get<std::uint32_t>();
        if (m.format_version != kFormatVersion)
            throw FormatError("dataset format_version " + std::to_string(m.format_version) + " is not supported (expected " +
                              std::to_string(kFormatVersion) + ")");
        m.model = head.at("model").get<std::string>();
        const json& dims = head.at("dims");
        m.theta_dim = dims.at("theta").get<std::size_t>();
        m.shape = DataShape{data_kind_from_string(dims.at("x_kind").get<std::string>()), dims.at("x_rows").get<std::size_t>(),
                            dims.at("x_dim").get<std::size_t>()};
        m.constants = head.at("constants").get<Constants>();
        m.dt = head.at("dt").get<double>();
        m.seed = head.at("seed").get<std::uint64_t>();
        m.n_rows = head.at("n_rows").get<std::size_t>();
        m.config_hash = head.value("config_hash", "");
        m.created = head.value("created", "");
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad dataset metadata: ") + e.what());
    }
    SimulationBatch b;
    b.shape = m.shape;
    const auto r = static_cast<Eigen::Index>(m.shape.rows);
    const auto n = static_cast<Eigen::Index>(m.n_rows);
    b.theta.resize(n, static_cast<Eigen::Index>(m.theta_dim));
    b.x.resize(n * r, static_cast<Eigen::Index>(m.shape.dim));
    b.seeds.resize(m.n_rows);
    Eigen::Index i = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (i >= n) throw FormatError("dataset has more rows than its metadata declares");
        try {
            const json rec = json::parse(line);
            b.theta.row(i) = json_to_row(rec.at("theta"), m.theta_dim, "theta");
            const json& x = rec.at("x");
            if (m.shape.kind == DataShape::Kind::flat) {
                b.x.row(i) = json_to_row(x, m.shape.dim, "x");
            } else {
                if (!x.is_array() || x.size() != m.shape.rows) throw DimensionError("x rows", m.shape.rows, x.is_array() ? x.size() : 0);
                for (Eigen::Index k = 0; k < r; ++k) b.x.row(i * r + k) = json_to_row(x[static_cast<std::size_t>(k)], m.shape.dim, "x row");
            }
            b.seeds[static_cast<std::size_t>(i)] = rec.at("seed").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw FormatError("bad dataset row " + std::to_string(i) + ": " + e.what());
        }
        ++i;
    }
    if (i != n) throw FormatError("dataset truncated: " + std::to_string(i) + " of " + std::to_string(n) + " rows");
    return {m, b};
}

std::pair<DatasetMetadata, SimulationBatch> read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "'");
    return read_dataset(f);
}

}  // namespace jana
