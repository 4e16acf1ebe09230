#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crl/error.hpp"
#include "crl/objectives.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace crl;
using testing::numeric_grad;
using testing::random_matrix;
using testing::rel_error;
using oracle::queue_from;
using oracle::rows_of;

namespace {

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(perm[i], j);
  return out;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("nt_xent closed-form cases") {
  const Matrix same = rows_of({{1, 0, 0}});
  CHECK(std::abs(nt_xent(same, same, 0.5).value) < 1e-12);
  const Matrix z = rows_of({{1, 0}, {0, 1}});
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(std::abs(nt_xent(z, z, 1.0).value - expect) < 1e-6);
  CHECK(std::abs(expect - 0.5514) < 1e-4);
  CHECK_THROWS_AS(nt_xent(rows_of({{0, 0}}), rows_of({{1, 0}}), 1.0), NumericError);
}

TEST_CASE("moco closed-form cases") {
  const Matrix q = rows_of({{1, 0}});
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(moco_loss(q, q, queue_from(rows_of({{0, 1}})), 1.0).value - expect) < 1e-6);
  CHECK(std::abs(expect - 0.3133) < 1e-4);
  for (std::size_t K : {1, 3, 7}) {
    NegativeQueue queue(K);
    for (std::size_t i = 0; i < K; ++i) queue.enqueue(q);
    CHECK(moco_loss(q, q, queue, 1.0).value == doctest::Approx(std::log(1.0 + K)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(moco_loss(q, q, NegativeQueue(4), 1.0), UsageError);
}

TEST_CASE("barlow twins constructed cross-correlation") {
  // x and y are zero-mean with equal variance and correlation 0.5, so C is
  // [[1, .5], [.5, 1]] and only the off-diagonal term contributes.
  const double s = std::sqrt(3.0) / 2.0;
  const double x[4] = {1, 1, -1, -1}, u[4] = {1, -1, 1, -1};
  Matrix z(4, 2);
  for (int i = 0; i < 4; ++i) {
    z(i, 0) = x[i];
    z(i, 1) = 0.5 * x[i] + s * u[i];
  }
  CHECK(std::abs(barlow_twins(z, z, 0.005).value - 0.0025) < 1e-9);

  // Perfectly whitened batch: C = I.
  const Matrix white = rows_of({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}});
  CHECK(std::abs(barlow_twins(white, white, 0.005).value) < 1e-9);
  CHECK_THROWS_AS(barlow_twins(rows_of({{1, 2}}), rows_of({{1, 2}}), 0.005), UsageError);
}

TEST_CASE("barlow twins flags zero-variance dimensions") {
  const Matrix a = rows_of({{1, 3}, {2, 3}, {4, 3}});
  const Matrix b = rows_of({{1, 2}, {2, 1}, {0, 5}});
  const auto l = barlow_twins(a, b, 0.005);
  CHECK(l.zero_variance_dims == 1);
  CHECK(barlow_twins(a, a, 0.005).zero_variance_dims == 2);
  CHECK(std::isfinite(l.value));
}

TEST_CASE("cross entropy and distillation closed-form cases") {
  const Matrix uniform(3, 4, 0.7);
  CHECK(std::abs(cross_entropy(uniform, std::vector<int>{0, 2, 3}).value - std::log(4.0)) < 1e-9);
  const Matrix sure = rows_of({{100, 0, 0}, {0, 0, 100}});
  CHECK(cross_entropy(sure, std::vector<int>{0, 2}).value < 1e-9);
  CHECK_THROWS_AS(cross_entropy(sure, std::vector<int>{0, 3}), UsageError);

  Rng rng(1);
  const Matrix t = random_matrix(3, 5, rng);
  CHECK(distill_mse(t, t).value == 0.0);
  Matrix shifted = t;
  for (auto& v : shifted.v) v += 1.0;
  CHECK(std::abs(distill_mse(shifted, t).value - 1.0) < 1e-12);
  CHECK(distill_kld(t, t, 2.0).value == doctest::Approx(0.0).scale(1e-12));
  CHECK(std::abs(distill_kld(rows_of({{0, 0}}), rows_of({{100, 0}}), 1.0).value - std::log(2.0)) < 1e-9);

  const Matrix one = rows_of({{0.3, -1.0, 2.0}});
  CHECK(distill_sim(one, one, 0.5).value == doctest::Approx(0.0).scale(1e-12));

  CHECK(joint_loss(2.0, 4.0, {1.0, 0.5}) == 4.0);
  CHECK(joint_loss(2.0, 4.0, {1.0, 0.0}) == 2.0);
  CHECK(joint_loss(2.0, 4.0, {0.0, 1.0}) == 4.0);
}

TEST_CASE("losses match brute-force oracles on random batches") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 2 + uniform_int(rng, 0, 6), p = 1 + uniform_int(rng, 0, 7);
    const Matrix a = random_matrix(B, p, rng), b = random_matrix(B, p, rng);
    const double tau = uniform_real(rng, 0.1, 2.0);
    const double ref = oracle::nt_xent(a, b, tau);
    CHECK(std::abs(nt_xent(a, b, tau).value - ref) <= 1e-6 * ref);
    CHECK(std::abs(distill_sim(a, b, tau).value - ref) <= 1e-6 * ref);

    const Matrix queue = random_matrix(1 + uniform_int(rng, 0, 9), p, rng);
    const double mref = oracle::moco(a, b, queue, tau);
    CHECK(std::abs(moco_loss(a, b, queue_from(queue), tau).value - mref) <= 1e-6 * mref);

    const double lambda = uniform_real(rng, 0.0, 0.1);
    const double bref = oracle::barlow(a, b, lambda);
    CHECK(std::abs(barlow_twins(a, b, lambda).value - bref) <= 1e-6 * bref + 1e-12);

    std::vector<int> y(B);
    for (auto& v : y) v = static_cast<int>(uniform_int(rng, 0, p - 1));
    const double cref = oracle::cross_entropy(a, y);
    CHECK(std::abs(cross_entropy(a, y).value - cref) <= 1e-6 * cref + 1e-12);

    const double kref = oracle::kld(a, b, 2.0);
    CHECK(std::abs(distill_kld(a, b, 2.0).value - kref) <= 1e-6 * kref + 1e-15);

    double mse = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) mse += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    CHECK(std::abs(distill_mse(a, b).value - mse / a.v.size()) <= 1e-12 * mse);
  }
}

TEST_CASE("symmetries and invariances") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 2 + uniform_int(rng, 0, 6), p = 2 + uniform_int(rng, 0, 6);
    const Matrix a = random_matrix(B, p, rng), b = random_matrix(B, p, rng);
    std::vector<std::size_t> perm(B);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    const Matrix pa = permute_rows(a, perm), pb = permute_rows(b, perm);
    CHECK(nt_xent(pa, pb, 0.5).value == doctest::Approx(nt_xent(a, b, 0.5).value).epsilon(1e-12));
    CHECK(nt_xent(b, a, 0.5).value == doctest::Approx(nt_xent(a, b, 0.5).value).epsilon(1e-12));
    CHECK(distill_sim(pa, pb, 0.5).value == doctest::Approx(distill_sim(a, b, 0.5).value).epsilon(1e-12));

    // Per-dimension affine rescaling of one view.
    Matrix scaled = a;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < p; ++j) scaled(i, j) = (j + 1) * 10.0 * a(i, j) + 3.0 * j;
    CHECK(barlow_twins(scaled, b, 0.005).value == doctest::Approx(barlow_twins(a, b, 0.005).value).epsilon(1e-9));

    Matrix shifted = a;
    for (auto& v : shifted.v) v += 5.0;
    CHECK(distill_kld(shifted, b, 2.0).value == doctest::Approx(distill_kld(a, b, 2.0).value).epsilon(1e-9));
  }
}

TEST_CASE("negative queue keeps unit-norm entries in FIFO order") {
  NegativeQueue q(3);
  q.enqueue(rows_of({{3, 4}, {0, 2}}));
  CHECK(q.size() == 2);
  CHECK(q.entry(0)[0] == doctest::Approx(0.6));
  q.enqueue(rows_of({{1, 0}, {0, -5}}));
  CHECK(q.size() == 3);
  CHECK(q.entry(0) == std::vector<double>{0.0, 1.0});  // {3,4} was evicted first
  CHECK(q.entry(2) == std::vector<double>{0.0, -1.0});
  Rng rng(4);
  NegativeQueue r(5);
  r.fill_random(4, rng);
  CHECK(r.size() == 5);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(oracle::dot(r.entry(i), r.entry(i)) == doctest::Approx(1.0));
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(5);
  const double h = 1e-5, tol = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 2 + uniform_int(rng, 0, 4), p = 2 + uniform_int(rng, 0, 4);
    Matrix a = random_matrix(B, p, rng), b = random_matrix(B, p, rng);
    const double tau = uniform_real(rng, 0.2, 1.5);

    const auto nx = nt_xent(a, b, tau);
    CHECK(rel_error(nx.grad_a.v, numeric_grad(a.v, [&] { return nt_xent(a, b, tau).value; }, h)) < tol);
    CHECK(rel_error(nx.grad_b.v, numeric_grad(b.v, [&] { return nt_xent(a, b, tau).value; }, h)) < tol);

    // Two standardized rows are always +-1, so Barlow Twins needs B >= 3 to
    // have a nonzero gradient.
    Matrix a3 = random_matrix(B + 1, p, rng), b3 = random_matrix(B + 1, p, rng);
    const auto bt = barlow_twins(a3, b3, 0.05);
    CHECK(rel_error(bt.grad_a.v, numeric_grad(a3.v, [&] { return barlow_twins(a3, b3, 0.05).value; }, h)) < tol);
    CHECK(rel_error(bt.grad_b.v, numeric_grad(b3.v, [&] { return barlow_twins(a3, b3, 0.05).value; }, h)) < tol);

    const NegativeQueue queue = queue_from(random_matrix(5, p, rng));
    const auto mc = moco_loss(a, b, queue, tau);
    CHECK(rel_error(mc.grad.v, numeric_grad(a.v, [&] { return moco_loss(a, b, queue, tau).value; }, h)) < tol);

    std::vector<int> y(B);
    for (auto& v : y) v = static_cast<int>(uniform_int(rng, 0, p - 1));
    const auto ce = cross_entropy(a, y);
    CHECK(rel_error(ce.grad.v, numeric_grad(a.v, [&] { return cross_entropy(a, y).value; }, h)) < tol);

    const auto ms = distill_mse(a, b);
    CHECK(rel_error(ms.grad.v, numeric_grad(a.v, [&] { return distill_mse(a, b).value; }, h)) < tol);

    const auto sm = distill_sim(a, b, tau);
    CHECK(rel_error(sm.grad.v, numeric_grad(a.v, [&] { return distill_sim(a, b, tau).value; }, h)) < tol);

    const auto kl = distill_kld(a, b, 2.0);
    CHECK(rel_error(kl.grad.v, numeric_grad(a.v, [&] { return distill_kld(a, b, 2.0).value; }, h)) < tol);
  }
}

TEST_CASE("gradients through a three-parameter micro-model") {
  // z = x * diag(theta); dL/dtheta_k = sum_b dL/dz_bk * x_bk.
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 3 + uniform_int(rng, 0, 3);
    const Matrix x = random_matrix(B, 3, rng), other = random_matrix(B, 3, rng);
    std::vector<double> theta = testing::random_doubles(3, rng);
    auto model = [&] {
      Matrix z = x;
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t k = 0; k < 3; ++k) z(i, k) *= theta[k];
      return z;
    };
    auto chain = [&](const Matrix& g) {
      std::vector<double> out(3, 0.0);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t k = 0; k < 3; ++k) out[k] += g(i, k) * x(i, k);
      return out;
    };
    CHECK(rel_error(chain(nt_xent(model(), other, 0.5).grad_a),
                    numeric_grad(theta, [&] { return nt_xent(model(), other, 0.5).value; })) < 1e-4);
    // Standardization removes per-column scale, so theta has no effect.
    for (double g : chain(barlow_twins(model(), other, 0.01).grad_a)) CHECK(std::abs(g) < 1e-6);
    const std::vector<int> y(B, 1);
    CHECK(rel_error(chain(cross_entropy(model(), y).grad),
                    numeric_grad(theta, [&] { return cross_entropy(model(), y).value; })) < 1e-4);
    CHECK(rel_error(chain(distill_kld(model(), other, 2.0).grad),
                    numeric_grad(theta, [&] { return distill_kld(model(), other, 2.0).value; })) < 1e-4);
  }
}

TEST_CASE("invalid configurations") {
  SSLConfig cfg;
  cfg.temperature = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.moco_momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS((JointLossWeights{0, 0}.validate()), ConfigError);
  CHECK_THROWS_AS(parse_ssl_method("byol"), ConfigError);
}

}
