#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "crl/dataspec.hpp"
#include "crl/error.hpp"
#include "support.hpp"

using namespace crl;

namespace {

SyntheticSpec tiny(std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.train_per_class = 3;
  s.test_per_class = 2;
  s.freq_bins = 16;
  s.frames = 32;
  s.seed = seed;
  return s;
}

// Mean and standard deviation over time per frequency bin.
std::vector<double> pooled_stats(const Tensor& f) {
  const std::size_t F = f.dim(0), N = f.dim(1);
  std::vector<double> out(2 * F);
  for (std::size_t r = 0; r < F; ++r) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < N; ++n) m += f.at(r, n);
    m /= N;
    for (std::size_t n = 0; n < N; ++n) v += (f.at(r, n) - m) * (f.at(r, n) - m);
    out[r] = m;
    out[F + r] = std::sqrt(v / N);
  }
  return out;
}

// Multinomial logistic regression by full-batch gradient descent on
// standardized features; returns test accuracy.
double linear_oracle(const Dataset& ds) {
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (const auto& c : ds.clips) {
    (c.split == Split::train ? xtr : xte).push_back(pooled_stats(c.features));
    (c.split == Split::train ? ytr : yte).push_back(c.label);
  }
  const std::size_t D = xtr[0].size(), K = static_cast<std::size_t>(ds.num_classes);
  std::vector<double> mu(D, 0), sd(D, 0);
  for (const auto& x : xtr)
    for (std::size_t d = 0; d < D; ++d) mu[d] += x[d] / xtr.size();
  for (const auto& x : xtr)
    for (std::size_t d = 0; d < D; ++d) sd[d] += (x[d] - mu[d]) * (x[d] - mu[d]) / xtr.size();
  for (auto& s : sd) s = std::sqrt(s) + 1e-9;
  auto norm = [&](std::vector<std::vector<double>>& xs) {
    for (auto& x : xs)
      for (std::size_t d = 0; d < D; ++d) x[d] = (x[d] - mu[d]) / sd[d];
  };
  norm(xtr);
  norm(xte);
  std::vector<double> W(K * D, 0.0), b(K, 0.0);
  auto logits = [&](const std::vector<double>& x) {
    std::vector<double> z(K);
    for (std::size_t k = 0; k < K; ++k) {
      z[k] = b[k];
      for (std::size_t d = 0; d < D; ++d) z[k] += W[k * D + d] * x[d];
    }
    return z;
  };
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gW(K * D, 0.0), gb(K, 0.0);
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      auto z = logits(xtr[i]);
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (auto& v : z) s += (v = std::exp(v - mx));
      for (std::size_t k = 0; k < K; ++k) {
        const double g = z[k] / s - (static_cast<int>(k) == ytr[i] ? 1.0 : 0.0);
        gb[k] += g;
        for (std::size_t d = 0; d < D; ++d) gW[k * D + d] += g * xtr[i][d];
      }
    }
    for (std::size_t i = 0; i < W.size(); ++i) W[i] -= 0.5 * (gW[i] / xtr.size() + 1e-3 * W[i]);
    for (std::size_t k = 0; k < K; ++k) b[k] -= 0.5 * gb[k] / xtr.size();
  }
  int correct = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) {
    const auto z = logits(xte[i]);
    correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == yte[i];
  }
  return static_cast<double>(correct) / xte.size();
}

std::vector<SpectrogramClip> dummy_clips(int classes, int per_class) {
  std::vector<SpectrogramClip> clips;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i)
      clips.push_back({"c" + std::to_string(c) + "-" + std::to_string(i), Tensor({1, 1}), c, Split::train});
  return clips;
}

ClipRefs refs(const std::vector<SpectrogramClip>& clips) {
  ClipRefs out;
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

}  // namespace

TEST_SUITE("dataspec") {

TEST_CASE("generation is deterministic and noise-free clips repeat exactly") {
  SyntheticSpec s;
  s.num_classes = 2;
  s.train_per_class = 10;
  s.test_per_class = 5;
  s.freq_bins = 32;
  s.frames = 64;
  s.noise_sigma = 0;
  s.seed = 7;
  const Dataset a = generate_synthetic(s), b = generate_synthetic(s);
  CHECK(a.clips.size() == 30);
  for (std::size_t i = 0; i < a.clips.size(); ++i) {
    CHECK(a.clips[i].clip_id == b.clips[i].clip_id);
    CHECK(a.clips[i].features == b.clips[i].features);
  }
  CHECK(a.fingerprint() == b.fingerprint());
  a.validate();
  s.seed = 8;
  CHECK(generate_synthetic(s).fingerprint() != a.fingerprint());
}

TEST_CASE("invalid generator arguments") {
  SyntheticSpec s = tiny();
  s.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
  s = tiny();
  s.freq_bins = 0;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
  s = tiny();
  s.noise_sigma = -1;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
}

TEST_CASE("pooled statistics are linearly separable on the reference corpus") {
  SyntheticSpec s;
  s.num_classes = 10;
  s.train_per_class = 50;
  s.test_per_class = 20;
  s.freq_bins = 64;
  s.frames = 128;
  s.noise_sigma = 0.5;
  s.seed = 1;
  const double acc = linear_oracle(generate_synthetic(s));
  MESSAGE("linear oracle accuracy " << acc);
  CHECK(acc >= 0.9);
}

TEST_CASE("task splits are disjoint and covering") {
  Rng rng(3);
  for (int draw = 0; draw < 100; ++draw) {
    Dataset ds;
    ds.num_classes = static_cast<int>(uniform_int(rng, 2, 30));
    const int T = static_cast<int>(uniform_int(rng, 1, ds.num_classes));
    const auto seq = split_tasks(ds, T, rng());
    REQUIRE(static_cast<int>(seq.tasks.size()) == T);
    std::multiset<int> seen;
    std::size_t largest = 0, smallest = ds.num_classes;
    for (const auto& t : seq.tasks) {
      seen.insert(t.begin(), t.end());
      largest = std::max(largest, t.size());
      smallest = std::min(smallest, t.size());
    }
    CHECK(static_cast<int>(seen.size()) == ds.num_classes);
    for (int c = 0; c < ds.num_classes; ++c) CHECK(seen.count(c) == 1);
    CHECK(largest - smallest <= 1);
    CHECK(smallest >= 1);
  }
}

TEST_CASE("uneven splits give the remainder to the earliest tasks") {
  Dataset ds;
  ds.num_classes = 10;
  const auto seq = split_tasks(ds, 4, 1);
  std::vector<std::size_t> sizes;
  for (const auto& t : seq.tasks) sizes.push_back(t.size());
  CHECK(sizes == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK_THROWS_AS(split_tasks(ds, 11, 1), ConfigError);
  CHECK_THROWS_AS(split_tasks(ds, 0, 1), ConfigError);
  CHECK(split_tasks(ds, 4, 1).class_order == seq.class_order);
}

TEST_CASE("materialized tasks hold exactly their classes") {
  const Dataset ds = generate_synthetic(tiny());
  const auto seq = split_tasks(ds, 2, 5);
  const auto t1 = materialize_task(ds, seq, 1), t2 = materialize_task(ds, seq, 2);
  std::set<int> l1, l2;
  for (const auto* c : t1.train) l1.insert(c->label);
  for (const auto* c : t2.train) l2.insert(c->label);
  for (int c : l1) CHECK(l2.count(c) == 0);
  CHECK(t1.train.size() == 6);
  CHECK(t1.test.size() == 4);
  for (const auto* c : t1.test) CHECK(c->split == Split::test);
  CHECK(seq.task_of(seq.tasks[1][0]) == 2);
}

TEST_CASE("SLEP subsets are stratified, clamped and reproducible") {
  const auto big = dummy_clips(2, 800);
  const ClipRefs all = refs(big);
  const auto sub = slep_subset(all, 200, 9);
  CHECK(sub.size() == 200);
  CHECK(static_cast<double>(sub.size()) / all.size() == doctest::Approx(0.125));
  CHECK(sub == slep_subset(all, 200, 9));

  const auto small = dummy_clips(2, 20);
  const auto s10 = slep_subset(refs(small), 10, 1);
  std::map<int, int> count;
  std::set<const SpectrogramClip*> unique(s10.begin(), s10.end());
  for (const auto* c : s10) ++count[c->label];
  CHECK(count[0] == 5);
  CHECK(count[1] == 5);
  CHECK(unique.size() == 10);

  const auto uneven = dummy_clips(3, 7);
  const auto s8 = slep_subset(refs(uneven), 8, 4);
  std::map<int, int> c3;
  for (const auto* c : s8) ++c3[c->label];
  int hi = 0, lo = 100;
  for (auto [k, v] : c3) hi = std::max(hi, v), lo = std::min(lo, v);
  CHECK(hi - lo <= 1);

  CHECK(slep_subset(refs(small), 40, 1) == refs(small));
  CHECK(slep_subset(refs(small), 1000, 1) == refs(small));
}

TEST_CASE("replay buffer accumulates only in full mode") {
  const auto clips = dummy_clips(3, 4);
  const ClipRefs all = refs(clips);
  const ClipRefs d1(all.begin(), all.begin() + 4), d2(all.begin() + 4, all.begin() + 8);
  ReplayBuffer full{ReplayMode::full, {}};
  full = replay_extend(full, d1);
  full = replay_extend(full, d2);
  CHECK(full.stored.size() == 8);
  ReplayBuffer none{ReplayMode::none, {}};
  none = replay_extend(none, d1);
  CHECK(none.stored.empty());
  CHECK(parse_replay_mode("full") == ReplayMode::full);
  CHECK_THROWS_AS(parse_replay_mode("partial"), ConfigError);
}

TEST_CASE("dataset written to disk loads back identically") {
  const auto dir = testing::scratch_dir("dataspec_roundtrip");
  const Dataset ds = generate_synthetic(tiny());
  write_dataset(ds, dir);
  const Dataset back = load_dataset(dir / "manifest.csv");
  CHECK(back.num_classes == ds.num_classes);
  REQUIRE(back.clips.size() == ds.clips.size());
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    CHECK(back.clips[i].clip_id == ds.clips[i].clip_id);
    CHECK(back.clips[i].features == ds.clips[i].features);
    CHECK(back.clips[i].split == ds.clips[i].split);
  }
}

TEST_CASE("manifest errors name the offending row") {
  const auto dir = testing::scratch_dir("dataspec_manifest");
  Tensor f({16, 32}, 0.5f);
  write_feature_file(dir / "a.bin", f);
  write_feature_file(dir / "b.bin", f);
  write_feature_file(dir / "small.bin", Tensor({16, 8}, 0.0f));
  auto manifest = [&](const std::string& body) {
    std::ofstream(dir / "m.csv") << "clip_id,path,label,split,fold\n" << body;
    return dir / "m.csv";
  };

  const Dataset three = load_dataset(manifest("a,a.bin,0,train,\nb,b.bin,1,train,1\nc,a.bin,1,test,2\n"));
  CHECK(three.clips.size() == 3);
  CHECK(three.num_classes == 2);
  CHECK(three.fold_of.at("c") == 2);

  auto message = [&](const std::string& body) {
    try {
      load_dataset(manifest(body));
    } catch (const IngestionError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("a,a.bin,0,train,\nb,b.bin,x,train,\n").find("unknown label") != std::string::npos);
  CHECK(message("a,a.bin,0,train,\nb,b.bin,x,train,\n").find("row 3") != std::string::npos);
  CHECK(message("a,missing.bin,0,train,\n").find("missing.bin") != std::string::npos);
  CHECK(message("a,a.bin,0,train,\nb,small.bin,1,train,\n").find("shape") != std::string::npos);
  CHECK(message("a,a.bin,0,valid,\n").find("split") != std::string::npos);
  CHECK_THROWS_AS(load_dataset(manifest("a,a.bin,3,train,\n"), 2), IngestionError);
  CHECK_THROWS_AS(load_dataset(dir / "nope.csv"), IngestionError);
}

TEST_CASE("feature files reject corrupt input") {
  const auto dir = testing::scratch_dir("dataspec_features");
  std::ofstream(dir / "bad.bin") << "NOTCRLF";
  CHECK_THROWS_AS(read_feature_file(dir / "bad.bin"), IngestionError);
  write_feature_file(dir / "ok.bin", Tensor({2, 3}, 1.5f));
  std::filesystem::resize_file(dir / "ok.bin", std::filesystem::file_size(dir / "ok.bin") - 2);
  CHECK_THROWS_AS(read_feature_file(dir / "ok.bin"), IngestionError);
}

TEST_CASE("fold reassignment") {
  Dataset ds = generate_synthetic(tiny());
  for (std::size_t i = 0; i < ds.clips.size(); ++i) ds.fold_of[ds.clips[i].clip_id] = static_cast<int>(i % 3);
  const Dataset f1 = ds.with_fold_as_test(1);
  for (const auto& c : f1.clips) CHECK((c.split == Split::test) == (f1.fold_of.at(c.clip_id) == 1));
}

}
