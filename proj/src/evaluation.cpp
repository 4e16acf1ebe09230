#include "crl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "crl/augment.hpp"
#include "crl/error.hpp"
#include "crl/objectives.hpp"
#include "crl/optim.hpp"

namespace crl {

std::string to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::LEP: return "LEP";
    case ProtocolKind::SLEP: return "SLEP";
    case ProtocolKind::FLEP: return "FLEP";
  }
  return "?";
}

ProtocolKind parse_protocol(const std::string& s) {
  if (s == "LEP" || s == "lep") return ProtocolKind::LEP;
  if (s == "SLEP" || s == "slep") return ProtocolKind::SLEP;
  if (s == "FLEP" || s == "flep") return ProtocolKind::FLEP;
  throw ConfigError("unknown protocol '" + s + "'");
}

// ---- AccuracyMatrix ----

AccuracyMatrix::AccuracyMatrix(int num_tasks) : num_tasks_(num_tasks) {
  if (num_tasks < 1) throw UsageError("accuracy matrix needs T >= 1");
  entries_.resize(static_cast<std::size_t>(num_tasks) * num_tasks);
}

void AccuracyMatrix::check(int t, int j) const {
  if (t < 1 || t > num_tasks_ || j < 1 || j > t)
    throw UsageError("accuracy matrix index (" + std::to_string(t) + "," + std::to_string(j) +
                     ") outside the lower triangle of T=" + std::to_string(num_tasks_));
}

void AccuracyMatrix::set(int t, int j, double accuracy) {
  check(t, j);
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw UsageError("accuracy must lie in [0,1]");
  entries_[(t - 1) * num_tasks_ + (j - 1)] = accuracy;
}

bool AccuracyMatrix::has(int t, int j) const {
  check(t, j);
  return entries_[(t - 1) * num_tasks_ + (j - 1)].has_value();
}

double AccuracyMatrix::at(int t, int j) const {
  check(t, j);
  const auto& e = entries_[(t - 1) * num_tasks_ + (j - 1)];
  if (!e) throw UsageError("accuracy matrix entry (" + std::to_string(t) + "," + std::to_string(j) + ") is missing");
  return *e;
}

bool AccuracyMatrix::row_complete(int t) const {
  for (int j = 1; j <= t; ++j)
    if (!has(t, j)) return false;
  return true;
}

bool AccuracyMatrix::complete() const {
  for (int t = 1; t <= num_tasks_; ++t)
    if (!row_complete(t)) return false;
  return true;
}

std::vector<double> AccuracyMatrix::row(int t) const {
  std::vector<double> r;
  for (int j = 1; j <= t; ++j) r.push_back(at(t, j));
  return r;
}

double avg_accuracy(const AccuracyMatrix& m, int t) {
  if (t < 1 || t > m.num_tasks()) throw UsageError("avg_accuracy: task " + std::to_string(t) + " out of range");
  if (!m.row_complete(t)) throw UsageError("avg_accuracy: row " + std::to_string(t) + " is incomplete");
  double s = 0;
  for (int j = 1; j <= t; ++j) s += m.at(t, j);
  return s / t;
}

double forgetting(const AccuracyMatrix& m, std::string* warning) {
  const int T = m.num_tasks();
  if (!m.complete()) throw UsageError("forgetting: accuracy matrix is incomplete");
  if (T == 1) {
    if (warning) *warning = "forgetting is undefined for T=1; reporting 0";
    return 0.0;
  }
  double s = 0;
  for (int j = 1; j < T; ++j) {
    double peak = -1.0;
    for (int tau = j; tau <= T; ++tau) peak = std::max(peak, m.at(tau, j) - m.at(T, j));
    s += peak;
  }
  return s / (T - 1);
}

MetricsReport summarize(const AccuracyMatrix& m, const std::vector<int>& classes_seen) {
  MetricsReport r;
  for (int t = 1; t <= m.num_tasks(); ++t) r.avg_accuracy.push_back(avg_accuracy(m, t));
  r.final_avg_accuracy = r.avg_accuracy.back();
  r.forgetting = forgetting(m, &r.warning);
  for (int c : classes_seen) r.chance.push_back(c > 0 ? 1.0 / c : 0.0);
  return r;
}

// ---- features ----

FeatureFn encoder_features(const nn::Encoder& encoder, int segment_len, std::size_t batch) {
  auto enc = std::make_shared<nn::Encoder>(encoder);
  return [enc, segment_len, batch](const ClipRefs& clips) {
    const std::size_t d = enc->output_dim();
    Tensor out({clips.size(), d});
    for (std::size_t start = 0; start < clips.size(); start += batch) {
      const std::size_t n = std::min(batch, clips.size() - start);
      const std::size_t F = clips[start]->freq_bins();
      Tensor x({n, F, static_cast<std::size_t>(segment_len)});
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor seg = center_segment(clips[start + i]->features, segment_len);
        std::copy(seg.data().begin(), seg.data().end(), x.data().begin() + i * seg.size());
      }
      const Tensor r = enc->forward(x, nn::Mode::infer);
      std::copy(r.data().begin(), r.data().end(), out.data().begin() + start * d);
    }
    return out;
  };
}

void FeatureBank::prefetch(const ClipRefs& clips) {
  ClipRefs missing;
  std::set<const SpectrogramClip*> seen;
  for (const auto* c : clips)
    if (!cache_.count(c) && seen.insert(c).second) missing.push_back(c);
  if (missing.empty()) return;
  const Tensor f = fn_(missing);
  dim_ = f.dim(1);
  for (std::size_t i = 0; i < missing.size(); ++i)
    cache_[missing[i]] = std::vector<float>(f.data().begin() + i * dim_, f.data().begin() + (i + 1) * dim_);
}

const std::vector<float>& FeatureBank::get(const SpectrogramClip* clip) {
  auto it = cache_.find(clip);
  if (it == cache_.end()) {
    prefetch({clip});
    it = cache_.find(clip);
  }
  return it->second;
}

// ---- probes ----

int LinearProbe::predict(const std::vector<float>& feature) const {
  const std::size_t d = mean.size();
  Tensor x({1, d});
  for (std::size_t i = 0; i < d; ++i) x[i] = (feature[i] - mean[i]) * inv_std[i];
  const Tensor logits = head.forward(x, nn::Mode::infer);
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return classes[best];
}

LinearProbe train_probe(FeatureBank& bank, const ClipRefs& labeled, const std::vector<int>& classes,
                        const ProbeConfig& cfg, std::uint64_t seed) {
  if (classes.empty()) throw EvaluationError("train_probe: no classes");
  std::map<int, int> index;
  for (std::size_t k = 0; k < classes.size(); ++k) index[classes[k]] = static_cast<int>(k);
  std::vector<int> count(classes.size(), 0);
  for (const auto* c : labeled) {
    auto it = index.find(c->label);
    if (it == index.end())
      throw EvaluationError("train_probe: clip " + c->clip_id + " has label " + std::to_string(c->label) +
                            " outside the evaluation label set");
    count[it->second]++;
  }
  std::string absent;
  for (std::size_t k = 0; k < classes.size(); ++k)
    if (!count[k]) absent += (absent.empty() ? "" : ",") + std::to_string(classes[k]);
  if (!absent.empty()) throw EvaluationError("train_probe: no training clips for classes {" + absent + "}");

  bank.prefetch(labeled);
  const std::size_t n = labeled.size(), d = bank.dim();
  Tensor feats({n, d});
  std::vector<int> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = bank.get(labeled[i]);
    std::copy(f.begin(), f.end(), feats.data().begin() + i * d);
    targets[i] = index[labeled[i]->label];
  }

  LinearProbe probe{classes, std::vector<float>(d), std::vector<float>(d), nn::ClassifierHead(d, classes.size(), seed)};
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mu += feats.at(i, j);
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (feats.at(i, j) - mu) * (feats.at(i, j) - mu);
    var /= static_cast<double>(n);
    probe.mean[j] = static_cast<float>(mu);
    probe.inv_std[j] = static_cast<float>(1.0 / std::sqrt(var + 1e-6));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) feats.at(i, j) = (feats.at(i, j) - probe.mean[j]) * probe.inv_std[j];

  nn::OptimConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  nn::Optimizer opt(ocfg, probe.head.trainable());
  Rng rng(mix_seed(seed, "probe-order"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(bs, n - start);
      Tensor x({m, d});
      std::vector<int> y(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t src = order[start + i];
        std::copy(feats.data().begin() + src * d, feats.data().begin() + (src + 1) * d, x.data().begin() + i * d);
        y[i] = targets[src];
      }
      const Tensor logits = probe.head.forward(x, nn::Mode::train);
      const auto ce = cross_entropy(Matrix::from(logits), y);
      probe.head.backward(ce.grad.to_tensor());
      opt.step(ce.value, "probe epoch " + std::to_string(epoch));
    }
  }
  return probe;
}

double probe_accuracy(const LinearProbe& probe, FeatureBank& bank, const ClipRefs& test) {
  if (test.empty()) throw EvaluationError("probe_accuracy: empty test set");
  bank.prefetch(test);
  std::size_t correct = 0;
  for (const auto* c : test)
    if (probe.predict(bank.get(c)) == c->label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

const ClipRefs& SlepStore::subset(int task, const ClipRefs& task_train) {
  auto it = subsets_.find(task);
  if (it == subsets_.end())
    it = subsets_.emplace(task, slep_subset(task_train, budget_, mix_seed(seed_, "slep-task", {std::uint64_t(task)}))).first;
  return it->second;
}

std::vector<double> evaluate_in_domain(FeatureBank& bank, const Dataset& dataset, const TaskSequence& seq, int t,
                                       const ProtocolSpec& proto, SlepStore* slep, std::uint64_t probe_seed) {
  if (proto.kind == ProtocolKind::FLEP) throw UsageError("evaluate_in_domain: FLEP is an out-of-domain protocol");
  if (proto.kind == ProtocolKind::SLEP && !slep) throw UsageError("evaluate_in_domain: SLEP needs a subset store");
  ClipRefs labeled;
  std::vector<TaskDataset> tasks;
  for (int tau = 1; tau <= t; ++tau) {
    tasks.push_back(materialize_task(dataset, seq, tau));
    const auto& tr = tasks.back().train;
    const ClipRefs& part = proto.kind == ProtocolKind::LEP ? tr : slep->subset(tau, tr);
    labeled.insert(labeled.end(), part.begin(), part.end());
  }
  const LinearProbe probe = train_probe(bank, labeled, seq.classes_up_to(t), proto.probe, probe_seed);
  std::vector<double> row;
  for (const auto& task : tasks) row.push_back(probe_accuracy(probe, bank, task.test));
  return row;
}

void check_downstream(const Dataset& downstream, const Dataset& training) {
  if (&downstream == &training || downstream.name == training.name ||
      downstream.fingerprint() == training.fingerprint())
    throw ConfigError("FLEP: downstream dataset '" + downstream.name + "' is the encoder-training dataset");
}

double evaluate_flep(FeatureBank& downstream_bank, const Dataset& downstream, const ProtocolSpec& proto,
                     std::uint64_t probe_seed) {
  std::vector<int> classes(downstream.num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  const LinearProbe probe =
      train_probe(downstream_bank, downstream.split(Split::train), classes, proto.probe, probe_seed);
  return probe_accuracy(probe, downstream_bank, downstream.split(Split::test));
}

}  // namespace crl
