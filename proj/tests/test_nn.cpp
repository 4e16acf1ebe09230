#include <doctest.h>

#include "crl/error.hpp"
#include "crl/nn.hpp"
#include "crl/optim.hpp"
#include "support.hpp"

using namespace crl;
using namespace crl::nn;

namespace {

Tensor random_batch(std::size_t B, std::size_t F, std::size_t L, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({B, F, L});
  for (auto& v : x.storage()) v = static_cast<float>(normal(rng));
  return x;
}

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.freq_bins = 16;
  cfg.channels = {4, 8};
  return cfg;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("encoder output dimension keeps frequency position") {
  EncoderConfig cfg;
  CHECK(cfg.output_dim() == 128);
  Encoder enc(cfg, 1);
  const Tensor y = enc.forward(random_batch(3, 64, 64, 2), Mode::infer);
  CHECK(y.shape() == std::vector<std::size_t>{3, 128});
  for (float v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("global pooling averages the time-pooled frequency positions") {
  EncoderConfig cfg = small_config();
  Encoder keep(cfg, 4);
  cfg.global_pool = true;
  CHECK(cfg.output_dim() == 8);
  Encoder pooled(cfg, 4);
  CHECK(keep.arch_hash() != pooled.arch_hash());
  const Tensor x = random_batch(2, 16, 32, 5);
  const Tensor a = keep.forward(x, Mode::infer), b = pooled.forward(x, Mode::infer);
  REQUIRE(b.shape() == std::vector<std::size_t>{2, 8});
  // Same seed, same weights: the global output is the mean of the 4
  // frequency positions of the time-pooled one.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      double m = 0;
      for (std::size_t h = 0; h < 4; ++h) m += a.at(i, c * 4 + h);
      CHECK(b.at(i, c) == doctest::Approx(m / 4).epsilon(1e-5));
    }
}

TEST_CASE("encoder is deterministic and rejects bad input") {
  Encoder enc(small_config(), 3);
  const Tensor zero({1, 16, 32});
  const Tensor a = enc.forward(zero, Mode::infer), b = enc.forward(zero, Mode::infer);
  CHECK(a == b);
  CHECK_THROWS_AS(enc.forward(Tensor({1, 15, 32}), Mode::infer), UsageError);
  Tensor bad({1, 16, 32});
  bad[5] = std::nanf("");
  CHECK_THROWS_AS(enc.forward(bad, Mode::infer), UsageError);
}

TEST_CASE("inference forward has no cross-batch leakage") {
  Encoder enc(small_config(), 4);
  const Tensor a = random_batch(2, 16, 32, 5), b = random_batch(3, 16, 32, 6);
  Tensor ab({5, 16, 32});
  std::copy(a.data().begin(), a.data().end(), ab.data().begin());
  std::copy(b.data().begin(), b.data().end(), ab.data().begin() + a.size());
  const Tensor ya = enc.forward(a, Mode::infer), yb = enc.forward(b, Mode::infer), yab = enc.forward(ab, Mode::infer);
  const std::size_t d = enc.output_dim();
  for (std::size_t i = 0; i < ya.size(); ++i) CHECK(yab[i] == ya[i]);
  for (std::size_t i = 0; i < yb.size(); ++i) CHECK(yab[2 * d + i] == yb[i]);
}

TEST_CASE("snapshot and restore are bit-exact value copies") {
  const auto cfg = small_config();
  Encoder enc(cfg, 7);
  const Tensor x = random_batch(4, 16, 32, 8);
  enc.forward(x, Mode::train);  // moves running statistics away from their init
  const EncoderState st = snapshot(enc, 3);
  const Tensor before = enc.forward(x, Mode::infer);

  Encoder restored = restore(st, cfg);
  CHECK(restored.flatten() == enc.flatten());
  CHECK(restored.forward(x, Mode::infer) == before);

  enc.params()[0]->value[0] += 1.0f;
  CHECK(st.values != enc.flatten());
  CHECK(restore(st, cfg).forward(x, Mode::infer) == before);
}

TEST_CASE("restore rejects a different architecture") {
  Encoder enc(small_config(), 1);
  EncoderState st = snapshot(enc, 1);
  EncoderConfig other = small_config();
  other.channels = {4, 4};
  CHECK_THROWS_AS(restore(st, other), IntegrityError);
  st.arch_hash ^= 1;
  CHECK_THROWS_AS(restore(st, small_config()), IntegrityError);
  st = snapshot(enc, 1);
  st.values.pop_back();
  CHECK_THROWS_AS(restore(st, small_config()), IntegrityError);
}

TEST_CASE("state file round trip") {
  const auto dir = testing::scratch_dir("nn_state");
  Encoder enc(small_config(), 9);
  const EncoderState st = snapshot(enc, 4);
  save_state(st, dir / "encoder_task4.bin");
  const EncoderState back = load_state(dir / "encoder_task4.bin");
  CHECK(back.task_tag == 4);
  CHECK(back.arch_hash == st.arch_hash);
  CHECK(back.values == st.values);
  CHECK(std::filesystem::file_size(dir / "encoder_task4.bin") == 24 + 4 * st.values.size());
}

TEST_CASE("momentum update follows the EMA formula") {
  std::vector<float> key(6, 0.0f);
  const std::vector<float> query(6, 1.0f);
  momentum_update(key, query, 0.9);
  for (float v : key) CHECK(v == doctest::Approx(0.1).epsilon(1e-6));

  std::vector<float> k0 = {0.5f, -2.0f, 3.0f};
  const std::vector<float> q = {1.0f, 1.0f, -1.0f};
  for (double m : {0.0, 0.5, 0.9, 0.99}) {
    std::vector<float> k = k0;
    for (int step = 1; step <= 5; ++step) {
      momentum_update(k, q, m);
      const double mk = std::pow(m, step);
      for (std::size_t i = 0; i < k.size(); ++i)
        CHECK(k[i] == doctest::Approx(mk * k0[i] + (1 - mk) * q[i]).epsilon(1e-5));
    }
  }
  std::vector<float> same = q;
  momentum_update(same, q, 0.7);
  CHECK(same == q);
  std::vector<float> shorter(2);
  CHECK_THROWS_AS(momentum_update(shorter, q, 0.5), UsageError);
  CHECK_THROWS_AS(momentum_update(same, q, 1.0), UsageError);
}

TEST_CASE("momentum encoder moves only by EMA") {
  const auto cfg = small_config();
  Encoder enc(cfg, 10);
  ProjectionHead proj(enc.output_dim(), 8, 11);
  MomentumEncoder key(enc, proj, 0.5);
  const auto k0 = key.encoder().flatten();
  for (auto* p : enc.trainable())
    for (auto& v : p->value.storage()) v += 1.0f;
  key.update(enc, proj);
  const auto k1 = key.encoder().flatten();
  const auto q = enc.flatten();
  std::size_t trainable_values = 0;
  for (const auto* p : enc.trainable()) trainable_values += p->value.size();
  std::size_t offset = 0;
  // flatten() lists trainable values first, then buffers.
  std::vector<const Param*> ordered;
  for (bool buffers : {false, true})
    for (const auto* p : std::as_const(enc).params())
      if (p->buffer == buffers) ordered.push_back(p);
  for (const auto* p : ordered) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float expect = p->buffer ? k0[offset + i] : 0.5f * k0[offset + i] + 0.5f * q[offset + i];
      CHECK(k1[offset + i] == doctest::Approx(expect).epsilon(1e-6));
    }
    offset += p->value.size();
  }
  CHECK(trainable_values > 0);
}

TEST_CASE("plain SGD on a quadratic takes the closed-form step") {
  Param p{"theta", Tensor({4}, std::vector<float>{1.0f, -2.0f, 0.5f, 3.0f}), Tensor({4}), false};
  OptimConfig cfg;
  cfg.kind = OptimKind::sgd;
  cfg.momentum = 0.0;
  cfg.lr = 0.1;
  Optimizer opt(cfg, {&p});
  const Tensor before = p.value;
  // loss = ||theta||^2 / 2, gradient = theta
  double loss = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    p.grad[i] = p.value[i];
    loss += 0.5 * p.value[i] * p.value[i];
  }
  opt.step(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.value[i] == doctest::Approx(0.9 * before[i]).epsilon(1e-7));
  for (float g : p.grad.data()) CHECK(g == 0.0f);

  // Constant loss: zero gradient, parameters unchanged.
  const Tensor kept = p.value;
  opt.step(1.0);
  CHECK(p.value == kept);
}

TEST_CASE("optimizer refuses non-finite losses and gradients") {
  Param p{"w", Tensor({2}, 1.0f), Tensor({2}), false};
  Optimizer opt(OptimConfig{}, {&p});
  CHECK_THROWS_AS(opt.step(std::nan(""), "task 1"), TrainingError);
  p.grad[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(opt.step(0.5), TrainingError);
  Param buf{"running_mean", Tensor({2}), Tensor({2}), true};
  CHECK_THROWS_AS(Optimizer(OptimConfig{}, {&buf}), UsageError);
}

TEST_CASE("classifier head input gradient matches backward") {
  ClassifierHead head(6, 3, 12);
  Rng rng(13);
  Tensor x({4, 6}), dy({4, 3});
  for (auto& v : x.storage()) v = static_cast<float>(normal(rng));
  for (auto& v : dy.storage()) v = static_cast<float>(normal(rng));
  head.forward(x, Mode::train);
  const Tensor dx = head.backward(dy);
  const Tensor dx2 = head.input_gradient(dy);
  for (std::size_t i = 0; i < dx.size(); ++i) CHECK(dx2[i] == doctest::Approx(dx[i]).epsilon(1e-5));
}

TEST_CASE("encoder gradient matches finite differences through the whole stack") {
  // Float network; the double-precision kernels are checked more tightly in
  // the kernel suite.
  EncoderConfig cfg;
  cfg.freq_bins = 8;
  cfg.channels = {2};
  Encoder enc(cfg, 14);
  Rng rng(15);
  Tensor x = random_batch(3, 8, 8, 16);
  Tensor r({3, enc.output_dim()});
  for (auto& v : r.storage()) v = static_cast<float>(normal(rng));
  auto loss = [&] {
    const Tensor y = enc.forward(x, Mode::train);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
    return s;
  };
  loss();
  enc.zero_grad();
  enc.forward(x, Mode::train);
  enc.backward(r);
  Param* w = enc.trainable()[0];
  std::vector<double> analytic(w->grad.data().begin(), w->grad.data().end());
  std::vector<double> numeric(w->value.size());
  for (std::size_t i = 0; i < w->value.size(); ++i) {
    const float keep = w->value[i];
    w->value[i] = keep + 1e-3f;
    const double up = loss();
    w->value[i] = keep - 1e-3f;
    const double down = loss();
    w->value[i] = keep;
    numeric[i] = (up - down) / (2 * double(1e-3f));
  }
  CHECK(testing::rel_error(analytic, numeric) < 1e-3);
}

}
