#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crl/augment.hpp"
#include "crl/dataspec.hpp"
#include "crl/evaluation.hpp"
#include "crl/nn.hpp"
#include "crl/objectives.hpp"
#include "crl/optim.hpp"

namespace crl {

enum class RegimeMode { cssl, csup, joint };
enum class DistillKind { none, mse, sim, kld };

std::string to_string(RegimeMode m);
RegimeMode parse_regime_mode(const std::string& s);
std::string to_string(DistillKind k);
DistillKind parse_distill_kind(const std::string& s);

struct TrainingRegime {
  RegimeMode mode = RegimeMode::cssl;
  SSLConfig ssl;
  DistillKind distill = DistillKind::none;
  double distill_weight = 1.0;
  double distill_temperature = 2.0;  // KLD only
  ReplayMode replay = ReplayMode::none;
  int epochs_per_task = 20;
  int batch_size = 32;
  JointLossWeights joint;
  AugmentConfig augment;
  nn::OptimConfig optim;
  std::size_t proj_dim = 64;

  void validate() const;
  bool uses_labels() const { return mode != RegimeMode::cssl; }
  bool uses_ssl() const { return mode == RegimeMode::cssl || (mode == RegimeMode::joint && joint.beta > 0); }
  // "csup", "simclr", "simclr+mse", "joint(a=1,b=0.2)", ...
  std::string label() const;
};

// Records what the training loop touched; tests use it as an access log.
struct AccessLog {
  std::set<std::string> clip_ids;
  std::size_t feature_reads = 0;
  std::size_t label_reads = 0;
};

// The only path through which run_task reads training clips.
class TaskLoader {
 public:
  TaskLoader(ClipRefs clips, AccessLog* log) : clips_(std::move(clips)), log_(log) {}
  std::size_t size() const { return clips_.size(); }
  const Tensor& features(std::size_t i) const;
  int label(std::size_t i) const;

 private:
  ClipRefs clips_;
  AccessLog* log_;
};

struct TaskReport {
  int task = 0;
  std::size_t train_size = 0;
  long steps = 0;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  std::optional<std::uint64_t> teacher_checksum_before;
  std::optional<std::uint64_t> teacher_checksum_after;
  std::size_t label_reads = 0;
};

struct RunState {
  int task = 0;  // tasks completed so far
  std::uint64_t seed = 0;
  nn::EncoderConfig encoder_config;
  nn::Encoder encoder;
  nn::ProjectionHead projector;
  std::optional<nn::EncoderState> teacher;  // tagged task
  std::optional<nn::ClassifierHead> teacher_head;
  std::vector<int> teacher_head_classes;
  ReplayBuffer replay;
  std::vector<nn::EncoderState> snapshots;  // tags 1..task
  std::vector<TaskReport> reports;
};

RunState init_run(const nn::EncoderConfig& cfg, std::size_t proj_dim, ReplayMode replay, std::uint64_t seed);

// Encoder to start task t from: a fresh seeded init for t = 1, otherwise the
// bit-exact tag-(t-1) snapshot. Throws IntegrityError if that snapshot is missing.
nn::Encoder init_from_previous(const RunState& state, int t);

// Trains the encoder on one task (plus replayed clips) and advances the state.
RunState run_task(RunState state, const TaskDataset& task, const TrainingRegime& regime, AccessLog* log = nullptr);

struct EvalPlan {
  std::vector<ProtocolSpec> protocols;
  const Dataset* downstream = nullptr;  // required for FLEP
};

struct SequenceResult {
  std::map<ProtocolKind, AccuracyMatrix> matrices;  // in-domain protocols
  std::vector<double> flep_curve;
  std::vector<int> classes_seen;
  std::vector<nn::EncoderState> snapshots;
  std::vector<TaskReport> reports;
};

using TaskHook = std::function<void(int t, const RunState& state)>;

SequenceResult run_sequence(const Dataset& dataset, const TaskSequence& seq, const TrainingRegime& regime,
                            const EvalPlan& plan, const nn::EncoderConfig& encoder_config, std::uint64_t seed,
                            const TaskHook& on_task = {});

}  // namespace crl
