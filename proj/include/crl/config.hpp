#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crl/continual.hpp"
#include "crl/dataspec.hpp"
#include "crl/evaluation.hpp"
#include "crl/nn.hpp"

namespace crl {

// Where a dataset comes from: generated on the fly or loaded from a manifest.
struct DatasetSource {
  bool synthetic = true;
  SyntheticSpec spec;
  std::filesystem::path manifest;
  std::optional<int> num_classes;  // manifest only
  Dataset load() const;
};

struct ExperimentConfig {
  std::string label;
  std::vector<std::uint64_t> seeds = {1};
  std::filesystem::path output_dir = "runs/default";
  DatasetSource dataset;
  std::optional<DatasetSource> downstream;
  int num_tasks = 5;
  std::optional<std::uint64_t> split_seed;  // defaults to the run seed
  std::vector<int> folds;                   // empty: use the dataset's own splits
  nn::EncoderConfig encoder;
  TrainingRegime regime;
  std::vector<ProtocolSpec> protocols = {ProtocolSpec{}};
  std::string source_text;  // verbatim file contents

  void validate() const;
  std::string run_label() const { return label.empty() ? regime.label() : label; }
};

// Sectioned key = value text:
//
//   [section]
//   key = 12          # numbers, true/false, "strings" or [lists]
//
// Unknown sections or keys raise ConfigError naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<std::uint64_t> parse_seed_list(const std::string& s);

}  // namespace crl
