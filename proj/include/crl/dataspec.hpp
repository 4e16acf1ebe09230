#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

enum class Split { train, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

// One log-magnitude feature matrix of shape (freq_bins, frames).
struct SpectrogramClip {
  std::string clip_id;
  Tensor features;
  int label = 0;
  Split split = Split::train;

  std::size_t freq_bins() const { return features.dim(0); }
  std::size_t frames() const { return features.dim(1); }
};

using ClipRefs = std::vector<const SpectrogramClip*>;

struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<SpectrogramClip> clips;
  std::map<std::string, int> fold_of;

  // Checks every documented invariant; throws ConfigError naming the problem.
  void validate() const;
  std::size_t freq_bins() const;
  ClipRefs split(Split s) const;
  // Content hash over labels, splits and feature bits.
  std::uint64_t fingerprint() const;
  // Reassigns splits for cross-validation: clips in `test_fold` become test,
  // every other clip with a fold becomes train.
  Dataset with_fold_as_test(int test_fold) const;
};

struct SyntheticSpec {
  int num_classes = 10;
  int train_per_class = 40;
  int test_per_class = 20;
  int freq_bins = 64;
  int frames = 128;
  double noise_sigma = 0.5;
  std::uint64_t seed = 1;
  std::string name;  // defaults to "synthetic-<seed>"
};

// Deterministic corpus: each class has its own fundamental band, harmonic
// spacing and amplitude-modulation rate; clips jitter all three and add
// per-clip gain, modulation phase and i.i.d. Gaussian noise. Pure function of `spec`.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct TaskSequence {
  int num_tasks = 0;
  std::vector<int> class_order;
  std::vector<std::vector<int>> tasks;
  std::uint64_t seed = 0;

  // 1-based task index holding `label`.
  int task_of(int label) const;
  // Classes of tasks 1..t in task order.
  std::vector<int> classes_up_to(int t) const;
};

// Shuffles the classes with `seed` and assigns them contiguously; when
// C mod T != 0 the first (C mod T) tasks get one extra class.
TaskSequence split_tasks(const Dataset& dataset, int num_tasks, std::uint64_t seed);

// References into the source Dataset, which must outlive it.
struct TaskDataset {
  int task_index = 0;
  std::vector<int> classes;
  ClipRefs train;
  ClipRefs test;
};

TaskDataset materialize_task(const Dataset& dataset, const TaskSequence& seq, int t);

// Class-stratified uniform sample without replacement of min(budget, |train|)
// clips. Returns the input unchanged (same order) when budget >= |train|.
ClipRefs slep_subset(const ClipRefs& task_train, int per_task_budget, std::uint64_t seed);

enum class ReplayMode { none, full };

std::string to_string(ReplayMode m);
ReplayMode parse_replay_mode(const std::string& s);

struct ReplayBuffer {
  ReplayMode mode = ReplayMode::none;
  ClipRefs stored;
};

ReplayBuffer replay_extend(ReplayBuffer buffer, const ClipRefs& task_train);

// Feature files: "CRLF1", uint32 F, uint32 N, F*N float32, all little-endian.
void write_feature_file(const std::filesystem::path& path, const Tensor& features);
Tensor read_feature_file(const std::filesystem::path& path);

// Manifest CSV with header clip_id,path,label,split,fold. Relative paths
// resolve against the manifest's directory. When num_classes is given,
// labels >= num_classes are rejected; otherwise C = max label + 1.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::optional<int> num_classes = std::nullopt);

// Writes <dir>/manifest.csv and <dir>/features/<clip_id>.bin.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace crl
