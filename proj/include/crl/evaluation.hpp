#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crl/dataspec.hpp"
#include "crl/nn.hpp"

namespace crl {

enum class ProtocolKind { LEP, SLEP, FLEP };

std::string to_string(ProtocolKind k);
ProtocolKind parse_protocol(const std::string& s);

struct ProbeConfig {
  int epochs = 30;
  double lr = 1e-2;
  int batch_size = 64;
  double weight_decay = 0.0;
};

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::LEP;
  int slep_budget = 20;
  ProbeConfig probe;
};

// Lower-triangular T x T matrix; entry (t, j) is the accuracy on task j's
// test split after training task t. Indices are 1-based.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int num_tasks);

  int num_tasks() const { return num_tasks_; }
  void set(int t, int j, double accuracy);
  double at(int t, int j) const;
  bool has(int t, int j) const;
  bool row_complete(int t) const;
  bool complete() const;
  std::vector<double> row(int t) const;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  void check(int t, int j) const;
  int num_tasks_ = 0;
  std::vector<std::optional<double>> entries_;
};

// Mean of row t.
double avg_accuracy(const AccuracyMatrix& m, int t);

// (1/(T-1)) sum_{j<T} max_{tau} (A[tau][j] - A[T][j]); every term is >= 0
// because tau ranges over 1..T. For T = 1 returns 0 and sets *warning.
double forgetting(const AccuracyMatrix& m, std::string* warning = nullptr);

struct MetricsReport {
  std::vector<double> avg_accuracy;  // per task checkpoint
  double final_avg_accuracy = 0.0;
  double forgetting = 0.0;
  std::vector<double> chance;  // 1 / classes seen at each checkpoint
  std::string warning;
};

MetricsReport summarize(const AccuracyMatrix& m, const std::vector<int>& classes_seen);

// Maps a batch of clips to (n, d) features.
using FeatureFn = std::function<Tensor(const ClipRefs&)>;

// Centre segment, inference-mode forward. The encoder is copied, so the
// caller's instance is never touched.
FeatureFn encoder_features(const nn::Encoder& encoder, int segment_len, std::size_t batch = 64);

// Lazily computed per-clip features.
class FeatureBank {
 public:
  explicit FeatureBank(FeatureFn fn) : fn_(std::move(fn)) {}
  void prefetch(const ClipRefs& clips);
  const std::vector<float>& get(const SpectrogramClip* clip);
  std::size_t dim() const { return dim_; }

 private:
  FeatureFn fn_;
  std::unordered_map<const SpectrogramClip*, std::vector<float>> cache_;
  std::size_t dim_ = 0;
};

// Standardization followed by a linear head over `classes`.
struct LinearProbe {
  std::vector<int> classes;
  std::vector<float> mean;
  std::vector<float> inv_std;
  mutable nn::ClassifierHead head;

  int predict(const std::vector<float>& feature) const;
};

// Trains a freshly initialized probe with cross-entropy. Throws
// EvaluationError listing classes without a training clip.
LinearProbe train_probe(FeatureBank& bank, const ClipRefs& labeled, const std::vector<int>& classes,
                        const ProbeConfig& cfg, std::uint64_t seed);

double probe_accuracy(const LinearProbe& probe, FeatureBank& bank, const ClipRefs& test);

// Per-task SLEP subsets, drawn once and reused at every later checkpoint.
class SlepStore {
 public:
  SlepStore(int budget, std::uint64_t seed) : budget_(budget), seed_(seed) {}
  const ClipRefs& subset(int task, const ClipRefs& task_train);

 private:
  int budget_;
  std::uint64_t seed_;
  std::map<int, ClipRefs> subsets_;
};

// Row t of the accuracy matrix for LEP or SLEP.
std::vector<double> evaluate_in_domain(FeatureBank& bank, const Dataset& dataset, const TaskSequence& seq, int t,
                                       const ProtocolSpec& proto, SlepStore* slep, std::uint64_t probe_seed);

// Throws ConfigError when downstream is the encoder-training dataset.
void check_downstream(const Dataset& downstream, const Dataset& training);

double evaluate_flep(FeatureBank& downstream_bank, const Dataset& downstream, const ProtocolSpec& proto,
                     std::uint64_t probe_seed);

}  // namespace crl
