#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "crl/continual.hpp"
#include "crl/error.hpp"
#include "support.hpp"

using namespace crl;

namespace {

Dataset small_corpus(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.num_classes = 6;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.freq_bins = 16;
  spec.frames = 32;
  spec.seed = seed;
  return generate_synthetic(spec);
}

nn::EncoderConfig small_encoder() {
  nn::EncoderConfig cfg;
  cfg.freq_bins = 16;
  cfg.channels = {4, 4, 8, 8};
  return cfg;
}

TrainingRegime small_regime(RegimeMode mode, ReplayMode replay = ReplayMode::none) {
  TrainingRegime r;
  r.mode = mode;
  r.replay = replay;
  r.epochs_per_task = 1;
  r.batch_size = 8;
  r.proj_dim = 8;
  r.augment.segment_len = 16;
  r.ssl.moco_queue_size = 16;
  if (mode == RegimeMode::joint) r.joint.beta = 0.5;
  return r;
}

std::set<std::string> ids(const ClipRefs& clips) {
  std::set<std::string> s;
  for (const auto* c : clips) s.insert(c->clip_id);
  return s;
}

RunState run_tasks(const Dataset& d, const TaskSequence& seq, const TrainingRegime& r, int upto,
                   std::vector<AccessLog>* logs = nullptr) {
  RunState s = init_run(small_encoder(), r.proj_dim, r.replay, 5);
  for (int t = 1; t <= upto; ++t) {
    AccessLog log;
    s = run_task(std::move(s), materialize_task(d, seq, t), r, &log);
    if (logs) logs->push_back(log);
  }
  return s;
}

}  // namespace

TEST_SUITE("continual") {

TEST_CASE("self-supervised training never reads a label") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 2);
  for (auto method : {SslMethod::simclr, SslMethod::moco, SslMethod::barlow}) {
    TrainingRegime r = small_regime(RegimeMode::cssl, ReplayMode::full);
    r.ssl.method = method;
    r.distill = DistillKind::mse;
    std::vector<AccessLog> logs;
    const RunState s = run_tasks(d, seq, r, 3, &logs);
    for (const auto& log : logs) {
      CHECK(log.label_reads == 0);
      CHECK(log.feature_reads > 0);
    }
    for (const auto& rep : s.reports) CHECK(rep.label_reads == 0);
  }
}

TEST_CASE("supervised training reads labels") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 2, 2);
  std::vector<AccessLog> logs;
  run_tasks(d, seq, small_regime(RegimeMode::csup), 1, &logs);
  CHECK(logs[0].label_reads > 0);
}

TEST_CASE("without replay only the current task is touched") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 4);
  for (auto mode : {RegimeMode::cssl, RegimeMode::csup, RegimeMode::joint}) {
    std::vector<AccessLog> logs;
    run_tasks(d, seq, small_regime(mode), 3, &logs);
    for (int t = 1; t <= 3; ++t) CHECK(logs[t - 1].clip_ids == ids(materialize_task(d, seq, t).train));
  }
}

TEST_CASE("full replay accumulates every earlier task") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 4);
  std::vector<AccessLog> logs;
  const RunState s = run_tasks(d, seq, small_regime(RegimeMode::cssl, ReplayMode::full), 3, &logs);
  std::set<std::string> expected;
  std::size_t total = 0;
  for (int t = 1; t <= 3; ++t) {
    const auto tr = materialize_task(d, seq, t).train;
    expected.merge(ids(tr));
    total += tr.size();
    CHECK(logs[t - 1].clip_ids == expected);
  }
  CHECK(s.reports[2].train_size == total);
  CHECK(s.replay.stored.size() == total);
  // At the last task the training multiset equals the offline one.
  std::multiset<std::string> offline, replayed;
  for (const auto* c : d.split(Split::train)) offline.insert(c->clip_id);
  for (const auto* c : s.replay.stored) replayed.insert(c->clip_id);
  CHECK(replayed == offline);
}

TEST_CASE("the teacher is frozen while the student trains") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 1);
  for (auto kind : {DistillKind::mse, DistillKind::sim, DistillKind::kld}) {
    TrainingRegime r = small_regime(kind == DistillKind::kld ? RegimeMode::csup : RegimeMode::cssl);
    r.distill = kind;
    const RunState s = run_tasks(d, seq, r, 3);
    CHECK(!s.reports[0].teacher_checksum_before);
    for (int t = 2; t <= 3; ++t) {
      const auto& rep = s.reports[t - 1];
      REQUIRE(rep.teacher_checksum_before);
      CHECK(*rep.teacher_checksum_before == *rep.teacher_checksum_after);
      CHECK(*rep.teacher_checksum_before == restore(s.snapshots[t - 2], small_encoder()).checksum());
    }
  }
}

TEST_CASE("each task starts bit-exactly from the previous snapshot") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 1);
  const TrainingRegime r = small_regime(RegimeMode::cssl);
  RunState s = run_tasks(d, seq, r, 2);
  REQUIRE(s.snapshots.size() == 2);
  CHECK(s.snapshots[0].task_tag == 1);
  CHECK(s.snapshots[1].task_tag == 2);
  const nn::Encoder start = init_from_previous(s, 3);
  CHECK(snapshot(start, 2).values == s.snapshots[1].values);
  CHECK(start.checksum() == s.encoder.checksum());

  const nn::Encoder fresh = init_from_previous(s, 1);
  CHECK(fresh.checksum() == init_run(small_encoder(), r.proj_dim, r.replay, 5).encoder.checksum());

  RunState broken = s;
  broken.snapshots.pop_back();
  CHECK_THROWS_AS(init_from_previous(broken, 3), IntegrityError);
}

TEST_CASE("training changes the encoder") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 2, 1);
  for (auto mode : {RegimeMode::cssl, RegimeMode::csup, RegimeMode::joint}) {
    RunState s = init_run(small_encoder(), 8, ReplayMode::none, 5);
    const auto before = s.encoder.checksum();
    s = run_task(std::move(s), materialize_task(d, seq, 1), small_regime(mode));
    CHECK(s.encoder.checksum() != before);
    CHECK(s.task == 1);
    CHECK(std::isfinite(s.reports[0].last_epoch_loss));
  }
}

TEST_CASE("tasks must run in order") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 3, 1);
  RunState s = init_run(small_encoder(), 8, ReplayMode::none, 5);
  CHECK_THROWS(run_task(s, materialize_task(d, seq, 2), small_regime(RegimeMode::cssl)));
}

TEST_CASE("runs are reproducible") {
  const Dataset d = small_corpus();
  const TaskSequence seq = split_tasks(d, 2, 3);
  for (auto method : {SslMethod::simclr, SslMethod::moco, SslMethod::barlow}) {
    TrainingRegime r = small_regime(RegimeMode::cssl, ReplayMode::full);
    r.ssl.method = method;
    const RunState a = run_tasks(d, seq, r, 2);
    const RunState b = run_tasks(d, seq, r, 2);
    CHECK(a.encoder.checksum() == b.encoder.checksum());
    CHECK(a.reports[1].last_epoch_loss == b.reports[1].last_epoch_loss);
  }
}

TEST_CASE("sequence evaluation fills the matrix and the downstream curve") {
  const Dataset d = small_corpus();
  const Dataset down = small_corpus(9);
  const TaskSequence seq = split_tasks(d, 3, 1);
  EvalPlan plan;
  ProtocolSpec lep, slep, flep;
  lep.probe.epochs = slep.probe.epochs = flep.probe.epochs = 3;
  slep.kind = ProtocolKind::SLEP;
  slep.slep_budget = 2;
  flep.kind = ProtocolKind::FLEP;
  plan.protocols = {lep, slep, flep};
  plan.downstream = &down;
  int hooks = 0;
  const auto res = run_sequence(d, seq, small_regime(RegimeMode::cssl), plan, small_encoder(), 4,
                                [&](int t, const RunState& s) { CHECK(s.task == t); ++hooks; });
  CHECK(hooks == 3);
  CHECK(res.matrices.at(ProtocolKind::LEP).complete());
  CHECK(res.matrices.at(ProtocolKind::SLEP).complete());
  CHECK(res.flep_curve.size() == 3);
  CHECK(res.classes_seen == std::vector<int>{2, 4, 6});
  CHECK(res.snapshots.size() == 3);

  plan.protocols[1].slep_budget = 1;
  CHECK_THROWS_AS(run_sequence(d, seq, small_regime(RegimeMode::cssl), plan, small_encoder(), 4), ConfigError);
  plan.protocols[1].slep_budget = 2;
  plan.downstream = &d;
  CHECK_THROWS_AS(run_sequence(d, seq, small_regime(RegimeMode::cssl), plan, small_encoder(), 4), ConfigError);
}

TEST_CASE("regime validation") {
  TrainingRegime r;
  r.distill = DistillKind::kld;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  r.mode = RegimeMode::csup;
  r.validate();
  r.batch_size = 1;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  CHECK(parse_distill_kind("sim") == DistillKind::sim);
  CHECK_THROWS_AS(parse_regime_mode("offline"), ConfigError);
  TrainingRegime j;
  j.mode = RegimeMode::joint;
  j.joint.beta = 0.2;
  CHECK(j.uses_ssl());
  CHECK(j.uses_labels());
  j.joint.beta = 0;
  CHECK(!j.uses_ssl());
}

}
