#pragma once

#include "jana/simulators.hpp"

#include <iosfwd>
#include <string>

namespace jana {

/// First record of a dataset file.
struct DatasetMetadata {
    std::uint32_t format_version = kFormatVersion;
    std::string model;
    std::size_t theta_dim = 0;
    DataShape shape;
    Constants constants;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::size_t n_rows = 0;
    /// Hex FNV-1a digest of the configuration that produced the file.
    std::string config_hash;
    /// Wall-clock creation time; the only field allowed to differ between reruns.
    std::string created;
};

DatasetMetadata dataset_metadata(const BayesianModel& model, const SimulationBatch& batch, std::uint64_t seed);

/// NDJSON: the metadata record, then one {"theta", "x", "seed"} record per row.
void write_dataset(std::ostream& out, const DatasetMetadata& meta, const SimulationBatch& batch);
void write_dataset(const std::string& path, const DatasetMetadata& meta, const SimulationBatch& batch);

/// Throws FormatError on malformed input or a format_version other than kFormatVersion.
std::pair<DatasetMetadata, SimulationBatch> read_dataset(std::istream& in);
std::pair<DatasetMetadata, SimulationBatch> read_dataset(const std::string& path);

}  // namespace jana
