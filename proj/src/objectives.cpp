#include "crl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crl/error.hpp"

namespace crl {

std::string to_string(SslMethod m) {
  switch (m) {
    case SslMethod::simclr: return "simclr";
    case SslMethod::moco: return "moco";
    case SslMethod::barlow: return "barlow";
  }
  return "?";
}

SslMethod parse_ssl_method(const std::string& s) {
  if (s == "simclr") return SslMethod::simclr;
  if (s == "moco") return SslMethod::moco;
  if (s == "barlow") return SslMethod::barlow;
  throw ConfigError("unknown objective.method '" + s + "'");
}

void SSLConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("objective.temperature must be > 0");
  if (!(barlow_lambda >= 0)) throw ConfigError("objective.barlow_lambda must be >= 0");
  if (moco_queue_size < 1) throw ConfigError("objective.moco_queue must be >= 1");
  if (!(moco_momentum >= 0 && moco_momentum < 1)) throw ConfigError("objective.moco_momentum must be in [0,1)");
}

void JointLossWeights::validate() const {
  if (!(alpha >= 0) || !(beta >= 0)) throw ConfigError("joint weights must be >= 0");
  if (alpha == 0 && beta == 0) throw ConfigError("joint.alpha and joint.beta cannot both be zero");
}

namespace {

// Row-wise L2 normalization; keeps the norms for the backward pass.
Matrix normalize_rows(const Matrix& z, std::vector<double>& norms, const char* who) {
  Matrix u(z.rows, z.cols);
  norms.assign(z.rows, 0.0);
  for (std::size_t i = 0; i < z.rows; ++i) {
    double s = 0;
    for (double v : z.row(i)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 1e-12)) throw NumericError(std::string(who) + ": zero-norm row " + std::to_string(i));
    norms[i] = n;
    for (std::size_t c = 0; c < z.cols; ++c) u(i, c) = z(i, c) / n;
  }
  return u;
}

// d/dz of f(u = z/|z|) given du.
Matrix normalize_backward(const Matrix& u, const std::vector<double>& norms, const Matrix& du) {
  Matrix dz(u.rows, u.cols);
  for (std::size_t i = 0; i < u.rows; ++i) {
    double dot = 0;
    for (std::size_t c = 0; c < u.cols; ++c) dot += u(i, c) * du(i, c);
    for (std::size_t c = 0; c < u.cols; ++c) dz(i, c) = (du(i, c) - u(i, c) * dot) / norms[i];
  }
  return dz;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_same(const Matrix& a, const Matrix& b, const char* who) {
  if (!a.same_shape(b)) throw UsageError(std::string(who) + ": shape mismatch");
  if (a.rows == 0 || a.cols == 0) throw UsageError(std::string(who) + ": empty batch");
}

}  // namespace

// ---- queue ----

NegativeQueue::NegativeQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("negative queue capacity must be >= 1");
}

void NegativeQueue::enqueue(const Matrix& keys) {
  std::vector<double> norms;
  const Matrix u = normalize_rows(keys, norms, "queue");
  for (std::size_t i = 0; i < u.rows; ++i) {
    entries_.emplace_back(u.row(i).begin(), u.row(i).end());
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

void NegativeQueue::fill_random(std::size_t dim, Rng& rng) {
  Matrix m(capacity_, dim);
  for (auto& v : m.v) v = normal(rng);
  enqueue(m);
}

Matrix NegativeQueue::as_matrix() const {
  const std::size_t d = entries_.empty() ? 0 : entries_.front().size();
  Matrix m(entries_.size(), d);
  for (std::size_t i = 0; i < entries_.size(); ++i) std::copy(entries_[i].begin(), entries_[i].end(), m.row(i).begin());
  return m;
}

// ---- losses ----

PairLoss nt_xent(const Matrix& z_a, const Matrix& z_b, double temperature) {
  require_same(z_a, z_b, "nt_xent");
  if (!(temperature > 0)) throw UsageError("nt_xent: temperature must be > 0");
  const std::size_t B = z_a.rows, N = 2 * B, P = z_a.cols;
  Matrix z(N, P);
  std::copy(z_a.v.begin(), z_a.v.end(), z.v.begin());
  std::copy(z_b.v.begin(), z_b.v.end(), z.v.begin() + B * P);
  std::vector<double> norms;
  const Matrix u = normalize_rows(z, norms, "nt_xent");

  Matrix sim(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = i; k < N; ++k) sim(i, k) = sim(k, i) = dot(u.row(i), u.row(k)) / temperature;

  // G(i,k) = dL/dS(i,k) as contributed by anchor i.
  Matrix G(N, N);
  double loss = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t pos = (i + B) % N;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < N; ++k)
      if (k != i) mx = std::max(mx, sim(i, k));
    double denom = 0;
    for (std::size_t k = 0; k < N; ++k)
      if (k != i) denom += std::exp(sim(i, k) - mx);
    loss += -(sim(i, pos) - mx) + std::log(denom);
    for (std::size_t k = 0; k < N; ++k) {
      if (k == i) continue;
      G(i, k) = (std::exp(sim(i, k) - mx) / denom - (k == pos ? 1.0 : 0.0)) / static_cast<double>(N);
    }
  }
  loss /= static_cast<double>(N);

  Matrix du(N, P);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < N; ++k) {
      const double g = (G(i, k) + G(k, i)) / temperature;
      if (g == 0) continue;
      for (std::size_t c = 0; c < P; ++c) du(i, c) += g * u(k, c);
    }
  const Matrix dz = normalize_backward(u, norms, du);

  PairLoss out;
  out.value = std::max(0.0, loss);
  out.grad_a = Matrix(B, P);
  out.grad_b = Matrix(B, P);
  std::copy(dz.v.begin(), dz.v.begin() + B * P, out.grad_a.v.begin());
  std::copy(dz.v.begin() + B * P, dz.v.end(), out.grad_b.v.begin());
  return out;
}

TargetLoss moco_loss(const Matrix& q, const Matrix& k_pos, const NegativeQueue& queue, double temperature) {
  require_same(q, k_pos, "moco_loss");
  if (queue.empty()) throw UsageError("moco_loss: empty negative queue");
  if (queue.entry(0).size() != q.cols) throw UsageError("moco_loss: queue dimension mismatch");
  if (!(temperature > 0)) throw UsageError("moco_loss: temperature must be > 0");
  const std::size_t B = q.rows, P = q.cols, K = queue.size();
  std::vector<double> qn, kn;
  const Matrix uq = normalize_rows(q, qn, "moco_loss");
  const Matrix uk = normalize_rows(k_pos, kn, "moco_loss");

  Matrix du(B, P);
  double loss = 0;
  std::vector<double> logits(K + 1);
  for (std::size_t b = 0; b < B; ++b) {
    logits[0] = dot(uq.row(b), uk.row(b)) / temperature;
    for (std::size_t n = 0; n < K; ++n) logits[n + 1] = dot(uq.row(b), queue.entry(n)) / temperature;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double l : logits) denom += std::exp(l - mx);
    loss += -(logits[0] - mx) + std::log(denom);
    const double scale = 1.0 / (static_cast<double>(B) * temperature);
    const double p0 = std::exp(logits[0] - mx) / denom;
    for (std::size_t c = 0; c < P; ++c) du(b, c) += scale * (p0 - 1.0) * uk(b, c);
    for (std::size_t n = 0; n < K; ++n) {
      const double pn = std::exp(logits[n + 1] - mx) / denom;
      const auto& e = queue.entry(n);
      for (std::size_t c = 0; c < P; ++c) du(b, c) += scale * pn * e[c];
    }
  }
  return {std::max(0.0, loss / static_cast<double>(B)), normalize_backward(uq, qn, du)};
}

namespace {

struct Standardized {
  Matrix a;                 // standardized values
  std::vector<double> inv;  // 1/sqrt(var + eps) per column
  std::size_t degenerate = 0;
};

constexpr double kBarlowEps = 1e-12;

Standardized standardize_columns(const Matrix& z) {
  Standardized s{Matrix(z.rows, z.cols), std::vector<double>(z.cols), 0};
  const double B = static_cast<double>(z.rows);
  for (std::size_t c = 0; c < z.cols; ++c) {
    double mu = 0;
    for (std::size_t b = 0; b < z.rows; ++b) mu += z(b, c);
    mu /= B;
    double var = 0;
    for (std::size_t b = 0; b < z.rows; ++b) var += (z(b, c) - mu) * (z(b, c) - mu);
    var /= B;
    if (var < 1e-9) ++s.degenerate;
    s.inv[c] = 1.0 / std::sqrt(var + kBarlowEps);
    for (std::size_t b = 0; b < z.rows; ++b) s.a(b, c) = (z(b, c) - mu) * s.inv[c];
  }
  return s;
}

Matrix standardize_backward(const Standardized& s, const Matrix& da) {
  const std::size_t B = s.a.rows;
  Matrix dz(B, s.a.cols);
  for (std::size_t c = 0; c < s.a.cols; ++c) {
    double mean_da = 0, mean_da_a = 0;
    for (std::size_t b = 0; b < B; ++b) {
      mean_da += da(b, c);
      mean_da_a += da(b, c) * s.a(b, c);
    }
    mean_da /= static_cast<double>(B);
    mean_da_a /= static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) dz(b, c) = s.inv[c] * (da(b, c) - mean_da - s.a(b, c) * mean_da_a);
  }
  return dz;
}

}  // namespace

BarlowLoss barlow_twins(const Matrix& z_a, const Matrix& z_b, double lambda) {
  require_same(z_a, z_b, "barlow_twins");
  if (z_a.rows < 2) throw UsageError("barlow_twins: batch size must be >= 2");
  if (!(lambda >= 0)) throw UsageError("barlow_twins: lambda must be >= 0");
  const std::size_t B = z_a.rows, P = z_a.cols;
  const Standardized sa = standardize_columns(z_a), sb = standardize_columns(z_b);

  Matrix C(P, P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < P; ++j) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) s += sa.a(b, i) * sb.a(b, j);
      C(i, j) = s / static_cast<double>(B);
    }
  double loss = 0;
  Matrix G(P, P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < P; ++j) {
      if (i == j) {
        loss += (1 - C(i, i)) * (1 - C(i, i));
        G(i, i) = -2.0 * (1 - C(i, i));
      } else {
        loss += lambda * C(i, j) * C(i, j);
        G(i, j) = 2.0 * lambda * C(i, j);
      }
    }
  Matrix da(B, P), db(B, P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < P; ++i) {
      double ga = 0, gb = 0;
      for (std::size_t j = 0; j < P; ++j) {
        ga += G(i, j) * sb.a(b, j);
        gb += G(j, i) * sa.a(b, j);
      }
      da(b, i) = ga / static_cast<double>(B);
      db(b, i) = gb / static_cast<double>(B);
    }
  BarlowLoss out;
  out.value = loss;
  out.grad_a = standardize_backward(sa, da);
  out.grad_b = standardize_backward(sb, db);
  out.zero_variance_dims = sa.degenerate + sb.degenerate;
  return out;
}

TargetLoss cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows != labels.size()) throw UsageError("cross_entropy: batch size mismatch");
  if (logits.rows == 0) throw UsageError("cross_entropy: empty batch");
  const std::size_t B = logits.rows, K = logits.cols;
  TargetLoss out{0.0, Matrix(B, K)};
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K)
      throw UsageError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    const auto row = logits.row(b);
    const double mx = *std::max_element(row.begin(), row.end());
    double denom = 0;
    for (double l : row) denom += std::exp(l - mx);
    const double lse = mx + std::log(denom);
    out.value += lse - row[labels[b]];
    for (std::size_t k = 0; k < K; ++k)
      out.grad(b, k) = (std::exp(row[k] - lse) - (static_cast<int>(k) == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B);
  }
  out.value = std::max(0.0, out.value / static_cast<double>(B));
  return out;
}

TargetLoss distill_mse(const Matrix& student, const Matrix& teacher) {
  require_same(student, teacher, "distill_mse");
  const double n = static_cast<double>(student.v.size());
  TargetLoss out{0.0, Matrix(student.rows, student.cols)};
  for (std::size_t i = 0; i < student.v.size(); ++i) {
    const double d = student.v[i] - teacher.v[i];
    out.value += d * d;
    out.grad.v[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

TargetLoss distill_sim(const Matrix& student, const Matrix& teacher, double temperature) {
  auto pair = nt_xent(student, teacher, temperature);
  return {pair.value, std::move(pair.grad_a)};
}

TargetLoss distill_kld(const Matrix& student_logits, const Matrix& teacher_logits, double temperature) {
  require_same(student_logits, teacher_logits, "distill_kld");
  if (!(temperature > 0)) throw UsageError("distill_kld: temperature must be > 0");
  const std::size_t B = student_logits.rows, K = student_logits.cols;
  TargetLoss out{0.0, Matrix(B, K)};
  std::vector<double> ls(K), lt(K);
  auto log_softmax = [&](std::span<const double> row, std::vector<double>& o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v / temperature);
    double denom = 0;
    for (double v : row) denom += std::exp(v / temperature - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t k = 0; k < K; ++k) o[k] = row[k] / temperature - lse;
  };
  for (std::size_t b = 0; b < B; ++b) {
    log_softmax(student_logits.row(b), ls);
    log_softmax(teacher_logits.row(b), lt);
    double kl = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double pt = std::exp(lt[k]);
      kl += pt * (lt[k] - ls[k]);
      out.grad(b, k) = temperature * (std::exp(ls[k]) - pt) / static_cast<double>(B);
    }
    out.value += kl;
  }
  out.value = std::max(0.0, temperature * temperature * out.value / static_cast<double>(B));
  return out;
}

double joint_loss(double sup, double ssl, const JointLossWeights& w) { return w.alpha * sup + w.beta * ssl; }

}  // namespace crl
