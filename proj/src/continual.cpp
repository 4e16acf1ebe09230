#include "crl/continual.hpp"

#include <cmath>
#include <numeric>

#include "crl/error.hpp"

namespace crl {

std::string to_string(RegimeMode m) {
  switch (m) {
    case RegimeMode::cssl: return "cssl";
    case RegimeMode::csup: return "csup";
    case RegimeMode::joint: return "joint";
  }
  return "?";
}

RegimeMode parse_regime_mode(const std::string& s) {
  if (s == "cssl") return RegimeMode::cssl;
  if (s == "csup") return RegimeMode::csup;
  if (s == "joint") return RegimeMode::joint;
  throw ConfigError("unknown continual.mode '" + s + "'");
}

std::string to_string(DistillKind k) {
  switch (k) {
    case DistillKind::none: return "none";
    case DistillKind::mse: return "mse";
    case DistillKind::sim: return "sim";
    case DistillKind::kld: return "kld";
  }
  return "?";
}

DistillKind parse_distill_kind(const std::string& s) {
  if (s == "none") return DistillKind::none;
  if (s == "mse") return DistillKind::mse;
  if (s == "sim") return DistillKind::sim;
  if (s == "kld") return DistillKind::kld;
  throw ConfigError("unknown distill.kind '" + s + "'");
}

void TrainingRegime::validate() const {
  ssl.validate();
  if (mode == RegimeMode::cssl && distill == DistillKind::kld)
    throw ConfigError("distill.kind = kld needs a classifier head; use it with csup or joint");
  if (mode == RegimeMode::joint) joint.validate();
  if (epochs_per_task < 0) throw ConfigError("continual.epochs_per_task must be >= 0");
  if (batch_size < 2) throw ConfigError("continual.batch_size must be >= 2");
  if (!(distill_weight >= 0)) throw ConfigError("distill.weight must be >= 0");
  if (!(distill_temperature > 0)) throw ConfigError("distill.temperature must be > 0");
  if (proj_dim < 1) throw ConfigError("encoder.proj_dim must be >= 1");
}

std::string TrainingRegime::label() const {
  std::string s;
  switch (mode) {
    case RegimeMode::cssl: s = to_string(ssl.method); break;
    case RegimeMode::csup: s = "csup"; break;
    case RegimeMode::joint: {
      char buf[96];
      std::snprintf(buf, sizeof buf, "joint(a=%g,b=%g)", joint.alpha, joint.beta);
      s = buf;
      break;
    }
  }
  if (distill != DistillKind::none) s += "+" + to_string(distill);
  if (replay == ReplayMode::full) s += "-FR";
  return s;
}

const Tensor& TaskLoader::features(std::size_t i) const {
  if (log_) {
    log_->clip_ids.insert(clips_.at(i)->clip_id);
    ++log_->feature_reads;
  }
  return clips_.at(i)->features;
}

int TaskLoader::label(std::size_t i) const {
  if (log_) ++log_->label_reads;
  return clips_.at(i)->label;
}

RunState init_run(const nn::EncoderConfig& cfg, std::size_t proj_dim, ReplayMode replay, std::uint64_t seed) {
  nn::Encoder enc(cfg, mix_seed(seed, "encoder"));
  nn::ProjectionHead proj(enc.output_dim(), proj_dim, mix_seed(seed, "projector"));
  RunState st{0, seed, cfg, std::move(enc), std::move(proj), {}, {}, {}, ReplayBuffer{replay, {}}, {}, {}};
  return st;
}

nn::Encoder init_from_previous(const RunState& state, int t) {
  if (t < 1) throw UsageError("init_from_previous: task index must be >= 1");
  if (t == 1) return nn::Encoder(state.encoder_config, mix_seed(state.seed, "encoder"));
  for (const auto& s : state.snapshots)
    if (s.task_tag == t - 1) return nn::restore(s, state.encoder_config);
  throw IntegrityError("init_from_previous: no snapshot for task " + std::to_string(t - 1));
}

namespace {

Tensor stack(const std::vector<Tensor>& views) {
  const std::size_t F = views.front().dim(0), L = views.front().dim(1);
  Tensor x({views.size(), F, L});
  for (std::size_t i = 0; i < views.size(); ++i)
    std::copy(views[i].data().begin(), views[i].data().end(), x.data().begin() + i * F * L);
  return x;
}

Matrix rows(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols);
  std::copy(m.v.begin() + begin * m.cols, m.v.begin() + end * m.cols, out.v.begin());
  return out;
}

void add_rows(Matrix& dst, std::size_t begin, const Matrix& src, double w) {
  for (std::size_t i = 0; i < src.v.size(); ++i) dst.v[begin * dst.cols + i] += w * src.v[i];
}

struct SslOutput {
  double value = 0;
  Matrix grad;  // w.r.t. the stacked projections
};

}  // namespace

RunState run_task(RunState state, const TaskDataset& task, const TrainingRegime& regime, AccessLog* log) {
  regime.validate();
  const int t = task.task_index;
  if (t != state.task + 1)
    throw UsageError("run_task: expected task " + std::to_string(state.task + 1) + ", got " + std::to_string(t));
  if (task.train.empty()) throw ConfigError("run_task: task " + std::to_string(t) + " has no training clips");

  state.encoder = init_from_previous(state, t);
  nn::Encoder& enc = state.encoder;
  nn::ProjectionHead& proj = state.projector;
  regime.augment.validate(enc.config().freq_bins);

  const bool distill = t > 1 && regime.distill != DistillKind::none;
  std::optional<nn::Encoder> teacher;
  if (distill) {
    if (!state.teacher || state.teacher->task_tag != t - 1)
      throw IntegrityError("run_task: missing teacher snapshot for task " + std::to_string(t - 1));
    teacher = nn::restore(*state.teacher, state.encoder_config);
    if (regime.distill == DistillKind::kld && !state.teacher_head)
      throw IntegrityError("run_task: KLD distillation needs the previous classifier head");
  }

  ClipRefs train = task.train;
  train.insert(train.end(), state.replay.stored.begin(), state.replay.stored.end());
  TaskLoader loader(train, log);
  const std::size_t n = loader.size();

  TaskReport report;
  report.task = t;
  report.train_size = n;
  if (teacher) report.teacher_checksum_before = teacher->checksum();
  const std::size_t label_reads_before = log ? log->label_reads : 0;

  // Supervised head over the classes present in this task's training set.
  std::optional<nn::ClassifierHead> head;
  std::map<int, int> class_index;
  std::vector<int> head_classes;
  std::vector<int> targets;
  if (regime.uses_labels()) {
    targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) targets[i] = loader.label(i);
    for (int c : task.classes) class_index.emplace(c, 0);
    for (int c : targets) class_index.emplace(c, 0);
    for (auto& [c, k] : class_index) {
      k = static_cast<int>(head_classes.size());
      head_classes.push_back(c);
    }
    for (auto& y : targets) y = class_index.at(y);
    head.emplace(enc.output_dim(), head_classes.size(), mix_seed(state.seed, "head", {std::uint64_t(t)}));
  }

  const bool ssl = regime.uses_ssl();
  const SslMethod method = regime.ssl.method;
  std::vector<nn::Param*> trainable = enc.trainable();
  if (ssl) {
    auto p = proj.trainable();
    trainable.insert(trainable.end(), p.begin(), p.end());
  }
  if (head) {
    auto p = head->trainable();
    trainable.insert(trainable.end(), p.begin(), p.end());
  }
  nn::Optimizer opt(regime.optim, trainable);

  std::optional<nn::MomentumEncoder> key;
  std::optional<NegativeQueue> queue;
  if (ssl && method == SslMethod::moco) {
    key.emplace(enc, proj, regime.ssl.moco_momentum);
    queue.emplace(regime.ssl.moco_queue_size);
    Rng qrng(mix_seed(state.seed, "queue-init", {std::uint64_t(t)}));
    queue->fill_random(proj.output_dim(), qrng);
  }

  // Batches smaller than two cannot be batch-normalized; fold a trailing
  // singleton into the previous batch.
  const std::size_t bs = static_cast<std::size_t>(regime.batch_size);
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += bs) batches.emplace_back(s, std::min(n, s + bs));
  if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
    batches[batches.size() - 2].second = n;
    batches.pop_back();
  }
  if (n < 2) throw ConfigError("run_task: task " + std::to_string(t) + " needs at least 2 training clips");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < regime.epochs_per_task; ++epoch) {
    Rng order_rng(mix_seed(state.seed, "order", {std::uint64_t(t), std::uint64_t(epoch)}));
    shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto [b0, b1] = batches[bi];
      const std::size_t B = b1 - b0;
      Rng aug_rng(mix_seed(state.seed ^ regime.augment.seed_stream, "augment",
                           {std::uint64_t(t), std::uint64_t(epoch), std::uint64_t(bi)}));
      const std::string where =
          "task " + std::to_string(t) + " epoch " + std::to_string(epoch) + " step " + std::to_string(bi);

      // Inputs: CSUP uses one view per clip; the SSL paths use two, stacked
      // as [view_a rows; view_b rows].
      const bool two_views = ssl || regime.mode == RegimeMode::joint;
      std::vector<Tensor> va, vb;
      for (std::size_t i = b0; i < b1; ++i) {
        const Tensor& f = loader.features(order[i]);
        va.push_back(augment_view(f, regime.augment, aug_rng));
        if (two_views) vb.push_back(augment_view(f, regime.augment, aug_rng));
      }
      std::vector<Tensor> all = va;
      const bool moco = ssl && method == SslMethod::moco;
      if (two_views && !moco) all.insert(all.end(), vb.begin(), vb.end());
      const Tensor x = stack(all);
      const std::size_t R = all.size();

      const Tensor rep = enc.forward(x, nn::Mode::train);
      Matrix d_rep(R, enc.output_dim());
      double total = 0;

      if (head) {
        const Tensor logits = head->forward(rep, nn::Mode::train);
        std::vector<int> y(R);
        for (std::size_t r = 0; r < R; ++r) y[r] = targets[order[b0 + r % B]];
        const auto ce = cross_entropy(Matrix::from(logits), y);
        const double w = regime.mode == RegimeMode::joint ? regime.joint.alpha : 1.0;
        Matrix g = ce.grad;
        for (auto& v : g.v) v *= w;
        const Tensor dh = head->backward(g.to_tensor());
        for (std::size_t i = 0; i < dh.size(); ++i) d_rep.v[i] += dh[i];
        total += w * ce.value;
      }

      if (ssl) {
        const double w = regime.mode == RegimeMode::joint ? regime.joint.beta : 1.0;
        const Matrix z = Matrix::from(proj.forward(rep, nn::Mode::train));
        SslOutput out;
        Tensor keys_t;
        if (method == SslMethod::moco) {
          keys_t = key->keys(stack(vb));
          const auto l = moco_loss(z, Matrix::from(keys_t), *queue, regime.ssl.temperature);
          out = {l.value, l.grad};
        } else {
          const Matrix za = rows(z, 0, B), zb = rows(z, B, 2 * B);
          PairLoss l = method == SslMethod::simclr ? nt_xent(za, zb, regime.ssl.temperature)
                                                   : static_cast<PairLoss>(barlow_twins(za, zb, regime.ssl.barlow_lambda));
          out.value = l.value;
          out.grad = Matrix(2 * B, z.cols);
          add_rows(out.grad, 0, l.grad_a, 1.0);
          add_rows(out.grad, B, l.grad_b, 1.0);
        }
        for (auto& v : out.grad.v) v *= w;
        const Tensor dp = proj.backward(out.grad.to_tensor());
        for (std::size_t i = 0; i < dp.size(); ++i) d_rep.v[i] += dp[i];
        total += w * out.value;
        if (moco) queue->enqueue(Matrix::from(keys_t));
      }

      if (distill) {
        // Teacher sees exactly the student's inputs, in inference mode.
        const Tensor trep = teacher->forward(x, nn::Mode::infer);
        const Matrix s = Matrix::from(rep), tm = Matrix::from(trep);
        const double w = regime.distill_weight;
        TargetLoss l;
        switch (regime.distill) {
          case DistillKind::mse: l = distill_mse(s, tm); break;
          case DistillKind::sim: l = distill_sim(s, tm, regime.ssl.temperature); break;
          case DistillKind::kld: {
            auto& th = *state.teacher_head;
            const Tensor sl = th.forward(rep, nn::Mode::infer);
            const Tensor tl = th.forward(trep, nn::Mode::infer);
            const auto k = distill_kld(Matrix::from(sl), Matrix::from(tl), regime.distill_temperature);
            l.value = k.value;
            l.grad = Matrix::from(th.input_gradient(k.grad.to_tensor()));
            break;
          }
          case DistillKind::none: break;
        }
        add_rows(d_rep, 0, l.grad, w);
        total += w * l.value;
      }

      enc.backward(d_rep.to_tensor());
      opt.step(total, where);
      if (key) key->update(enc, proj);
      epoch_loss += total;
      ++report.steps;
    }
    epoch_loss /= static_cast<double>(batches.size());
    if (epoch == 0) report.first_epoch_loss = epoch_loss;
    report.last_epoch_loss = epoch_loss;
  }

  if (teacher) report.teacher_checksum_after = teacher->checksum();
  report.label_reads = log ? log->label_reads - label_reads_before : 0;

  state.snapshots.push_back(nn::snapshot(enc, t));
  state.teacher = state.snapshots.back();
  if (head) {
    state.teacher_head = std::move(head);
    state.teacher_head_classes = head_classes;
  }
  state.replay = replay_extend(std::move(state.replay), task.train);
  state.task = t;
  state.reports.push_back(report);
  return state;
}

SequenceResult run_sequence(const Dataset& dataset, const TaskSequence& seq, const TrainingRegime& regime,
                            const EvalPlan& plan, const nn::EncoderConfig& encoder_config, std::uint64_t seed,
                            const TaskHook& on_task) {
  regime.validate();
  const int T = seq.num_tasks;
  SequenceResult result;
  std::map<ProtocolKind, SlepStore> slep;
  for (const auto& p : plan.protocols) {
    if (p.kind == ProtocolKind::FLEP) {
      if (!plan.downstream) throw ConfigError("FLEP requested without a downstream dataset");
      check_downstream(*plan.downstream, dataset);
    } else {
      result.matrices.emplace(p.kind, AccuracyMatrix(T));
      if (p.kind == ProtocolKind::SLEP) {
        for (const auto& classes : seq.tasks)
          if (p.slep_budget < static_cast<int>(classes.size()))
            throw ConfigError("evaluation.slep_budget (" + std::to_string(p.slep_budget) + ") is smaller than the " +
                              std::to_string(classes.size()) + " classes of a task; SLEP needs one clip per class");
        slep.emplace(p.kind, SlepStore(p.slep_budget, mix_seed(seed, "slep")));
      }
    }
  }

  RunState state = init_run(encoder_config, regime.proj_dim, regime.replay, seed);
  for (int t = 1; t <= T; ++t) {
    state = run_task(std::move(state), materialize_task(dataset, seq, t), regime);
    result.classes_seen.push_back(static_cast<int>(seq.classes_up_to(t).size()));

    FeatureBank bank(encoder_features(state.encoder, regime.augment.segment_len));
    const std::uint64_t probe_seed = mix_seed(seed, "probe", {std::uint64_t(t)});
    for (const auto& p : plan.protocols) {
      if (p.kind == ProtocolKind::FLEP) {
        FeatureBank down(encoder_features(state.encoder, regime.augment.segment_len));
        result.flep_curve.push_back(
            evaluate_flep(down, *plan.downstream, p, mix_seed(seed, "flep-probe", {std::uint64_t(t)})));
        continue;
      }
      auto it = slep.find(p.kind);
      const auto row = evaluate_in_domain(bank, dataset, seq, t, p, it == slep.end() ? nullptr : &it->second, probe_seed);
      for (int j = 1; j <= t; ++j) result.matrices.at(p.kind).set(t, j, row[j - 1]);
    }
    if (on_task) on_task(t, state);
  }
  result.snapshots = state.snapshots;
  result.reports = state.reports;
  return result;
}

}  // namespace crl
