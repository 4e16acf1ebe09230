#pragma once

#include <cmath>
#include <initializer_list>
#include <span>
#include <vector>

#include "crl/objectives.hpp"

namespace crl::oracle {

// Straight loops over the definitions, sharing no code with the library.

inline std::vector<double> unit(std::span<const double> r) {
  double n = 0;
  for (double v : r) n += v * v;
  n = std::sqrt(n);
  std::vector<double> out(r.begin(), r.end());
  for (auto& v : out) v /= n;
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double nt_xent(const Matrix& a, const Matrix& b, double tau) {
  const std::size_t B = a.rows;
  std::vector<std::vector<double>> z;
  for (std::size_t i = 0; i < B; ++i) z.push_back(unit(a.row(i)));
  for (std::size_t i = 0; i < B; ++i) z.push_back(unit(b.row(i)));
  double total = 0;
  for (std::size_t i = 0; i < 2 * B; ++i) {
    const std::size_t pos = i < B ? i + B : i - B;
    double denom = 0;
    for (std::size_t k = 0; k < 2 * B; ++k)
      if (k != i) denom += std::exp(dot(z[i], z[k]) / tau);
    total += -std::log(std::exp(dot(z[i], z[pos]) / tau) / denom);
  }
  return total / (2.0 * B);
}

inline double moco(const Matrix& q, const Matrix& k, const Matrix& queue, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto qi = unit(q.row(i)), ki = unit(k.row(i));
    const double pos = std::exp(dot(qi, ki) / tau);
    double denom = pos;
    for (std::size_t n = 0; n < queue.rows; ++n) denom += std::exp(dot(qi, unit(queue.row(n))) / tau);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(q.rows);
}

inline double barlow(const Matrix& a, const Matrix& b, double lambda) {
  const std::size_t B = a.rows, p = a.cols;
  auto standardize = [&](const Matrix& m) {
    Matrix out = m;
    for (std::size_t j = 0; j < p; ++j) {
      double mu = 0, var = 0;
      for (std::size_t i = 0; i < B; ++i) mu += m(i, j);
      mu /= B;
      for (std::size_t i = 0; i < B; ++i) var += (m(i, j) - mu) * (m(i, j) - mu);
      var /= B;
      for (std::size_t i = 0; i < B; ++i) out(i, j) = (m(i, j) - mu) / std::sqrt(var);
    }
    return out;
  };
  const Matrix sa = standardize(a), sb = standardize(b);
  double loss = 0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double c = 0;
      for (std::size_t n = 0; n < B; ++n) c += sa(n, i) * sb(n, j);
      c /= B;
      loss += i == j ? (1 - c) * (1 - c) : lambda * c * c;
    }
  return loss;
}

inline double cross_entropy(const Matrix& logits, const std::vector<int>& y) {
  double total = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < logits.cols; ++k) z += std::exp(logits(i, k));
    total += std::log(z) - logits(i, static_cast<std::size_t>(y[i]));
  }
  return total / static_cast<double>(logits.rows);
}

inline double kld(const Matrix& s, const Matrix& t, double T) {
  double total = 0;
  for (std::size_t i = 0; i < s.rows; ++i) {
    double zs = 0, zt = 0;
    for (std::size_t k = 0; k < s.cols; ++k) {
      zs += std::exp(s(i, k) / T);
      zt += std::exp(t(i, k) / T);
    }
    for (std::size_t k = 0; k < s.cols; ++k) {
      const double pt = std::exp(t(i, k) / T) / zt, ps = std::exp(s(i, k) / T) / zs;
      total += pt * std::log(pt / ps);
    }
  }
  return T * T * total / static_cast<double>(s.rows);
}

inline Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows)
    for (double v : r) m.v[i++] = v;
  return m;
}

inline NegativeQueue queue_from(const Matrix& m) {
  NegativeQueue q(m.rows);
  q.enqueue(m);
  return q;
}

}  // namespace crl::oracle
