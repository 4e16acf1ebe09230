#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/config.hpp"

namespace crl {

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::ostream* log = nullptr;  // progress lines; null when quiet
};

// Writes the configured dataset (and downstream dataset, if any) as a
// manifest plus feature files. Returns the dataset directory.
std::filesystem::path cmd_generate_data(const ExperimentConfig& cfg, const RunOptions& opts);

// Runs every (seed, fold) combination, persists per-run artifacts and the
// aggregate results.json under the output directory, and returns the
// aggregate document.
nlohmann::json cmd_run(const ExperimentConfig& cfg, const RunOptions& opts);

// One line per protocol: final average accuracy and forgetting, mean +- std.
void print_summary(const nlohmann::json& doc, std::ostream& out);

nlohmann::json matrix_to_json(const AccuracyMatrix& m);
AccuracyMatrix matrix_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const MetricsReport& r);

// results.json without any wall-clock fields, for reproducibility checks.
nlohmann::json strip_timing(nlohmann::json doc);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace crl
