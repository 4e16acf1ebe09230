#pragma once

// OpenMP kernels used by the training path. Every output element is owned by
// exactly one iteration of the parallel loop and accumulated in a fixed order,
// so results do not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "crl/kernels/shapes.hpp"

namespace crl::kernels::omp {

namespace detail {

// Planes are processed in a "wide" layout: rows of W + 2 values, so that a
// 3x3 stencil over a zero-padded (H + 2) x (W + 2) source becomes nine
// shifted contiguous loops. The two trailing columns of each wide row are
// scratch and discarded.

template <class T>
void pad_plane(const T* src, std::size_t H, std::size_t W, T* dst) {
  const std::size_t Wp = W + 2;
  std::fill(dst, dst + (H + 2) * Wp, T(0));
  for (std::size_t h = 0; h < H; ++h) std::copy(src + h * W, src + (h + 1) * W, dst + (h + 1) * Wp + 1);
}

// wide[q] += sum_t k[t] * src[q + off_t] for q in [0, H * (W + 2)).
template <class T>
void stencil_accumulate(const T* src, std::size_t H, std::size_t W, const T* k, T* wide) {
  const std::size_t Wp = W + 2, n = H * Wp;
  const T k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4], k5 = k[5], k6 = k[6], k7 = k[7], k8 = k[8];
  const T* r0 = src;
  const T* r1 = src + Wp;
  const T* r2 = src + 2 * Wp;
#pragma omp simd
  for (std::size_t q = 0; q < n; ++q)
    wide[q] += k0 * r0[q] + k1 * r0[q + 1] + k2 * r0[q + 2] + k3 * r1[q] + k4 * r1[q + 1] + k5 * r1[q + 2] +
               k6 * r2[q] + k7 * r2[q + 1] + k8 * r2[q + 2];
}

template <class T>
void unwide(const T* wide, std::size_t H, std::size_t W, T* out) {
  for (std::size_t h = 0; h < H; ++h) std::copy(wide + h * (W + 2), wide + h * (W + 2) + W, out + h * W);
}

}  // namespace detail

template <class T>
void conv3x3_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                     std::span<const T> bias, std::span<T> y) {
  const std::size_t H = s.height, W = s.width, IC = s.in_ch, P = s.plane();
  const long B = static_cast<long>(s.batch), OC = static_cast<long>(s.out_ch);
  const std::size_t padded = (H + 2) * (W + 2) + 2;  // +2: the last stencil taps read past the final row
  std::vector<T> xp(s.batch * IC * padded);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < B * static_cast<long>(IC); ++i) detail::pad_plane(x.data() + i * P, H, W, xp.data() + i * padded);

#pragma omp parallel
  {
    std::vector<T> wide(H * (W + 2));
#pragma omp for collapse(2) schedule(static)
    for (long b = 0; b < B; ++b)
      for (long oc = 0; oc < OC; ++oc) {
        std::fill(wide.begin(), wide.end(), bias[oc]);
        for (std::size_t ic = 0; ic < IC; ++ic)
          detail::stencil_accumulate(xp.data() + (b * IC + ic) * padded, H, W, w.data() + (oc * IC + ic) * 9,
                                     wide.data());
        detail::unwide(wide.data(), H, W, y.data() + (b * OC + oc) * P);
      }
  }
}

template <class T>
void conv3x3_backward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const std::size_t H = s.height, W = s.width, Wp = W + 2, P = s.plane();
  const long B = static_cast<long>(s.batch), OC = static_cast<long>(s.out_ch);
  const long IC = static_cast<long>(s.in_ch);
  const std::size_t padded = (H + 2) * Wp + 2;

  std::vector<T> gp(s.batch * s.out_ch * padded);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < B * OC; ++i) detail::pad_plane(dy.data() + i * P, H, W, gp.data() + i * padded);

  // Input gradient: full correlation of dy with the flipped kernel.
  std::vector<T> flipped(w.size());
  for (std::size_t f = 0; f < w.size() / 9; ++f)
    for (std::size_t t = 0; t < 9; ++t) flipped[f * 9 + t] = w[f * 9 + 8 - t];
#pragma omp parallel
  {
    std::vector<T> wide(H * Wp);
#pragma omp for collapse(2) schedule(static)
    for (long b = 0; b < B; ++b)
      for (long ic = 0; ic < IC; ++ic) {
        std::fill(wide.begin(), wide.end(), T(0));
        for (long oc = 0; oc < OC; ++oc)
          detail::stencil_accumulate(gp.data() + (b * OC + oc) * padded, H, W, flipped.data() + (oc * IC + ic) * 9,
                                     wide.data());
        detail::unwide(wide.data(), H, W, dx.data() + (b * IC + ic) * P);
      }
  }

  // Weight gradient: nine dot products per (oc, ic) filter between dy in wide
  // layout (zero scratch columns) and the padded input, batch reduced in order.
  std::vector<T> xp(s.batch * s.in_ch * padded);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < B * IC; ++i) detail::pad_plane(x.data() + i * P, H, W, xp.data() + i * padded);
  std::vector<T> gw(s.batch * s.out_ch * H * Wp, T(0));
#pragma omp parallel for schedule(static)
  for (long i = 0; i < B * OC; ++i)
    for (std::size_t h = 0; h < H; ++h)
      std::copy(dy.data() + i * P + h * W, dy.data() + i * P + (h + 1) * W, gw.data() + i * H * Wp + h * Wp);

  const std::size_t n = H * Wp;
#pragma omp parallel for collapse(2) schedule(static)
  for (long oc = 0; oc < OC; ++oc)
    for (long ic = 0; ic < IC; ++ic) {
      T a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
      for (long b = 0; b < B; ++b) {
        const T* g = gw.data() + (b * OC + oc) * n;
        const T* r0 = xp.data() + (b * IC + ic) * padded;
        const T* r1 = r0 + Wp;
        const T* r2 = r0 + 2 * Wp;
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4, a5, a6, a7, a8)
        for (std::size_t q = 0; q < n; ++q) {
          const T gv = g[q];
          a0 += gv * r0[q];
          a1 += gv * r0[q + 1];
          a2 += gv * r0[q + 2];
          a3 += gv * r1[q];
          a4 += gv * r1[q + 1];
          a5 += gv * r1[q + 2];
          a6 += gv * r2[q];
          a7 += gv * r2[q + 1];
          a8 += gv * r2[q + 2];
        }
      }
      T* k = dw.data() + (oc * IC + ic) * 9;
      k[0] = a0, k[1] = a1, k[2] = a2, k[3] = a3, k[4] = a4, k[5] = a5, k[6] = a6, k[7] = a7, k[8] = a8;
    }

#pragma omp parallel for schedule(static)
  for (long oc = 0; oc < OC; ++oc) {
    T acc = 0;
    for (long b = 0; b < B; ++b) {
      const T* g = dy.data() + (b * OC + oc) * P;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < P; ++i) acc += g[i];
    }
    db[oc] = acc;
  }
}

template <class T>
void batchnorm_forward_train(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> y, std::span<T> mean,
                             std::span<T> inv_std) {
  const double n = static_cast<double>(s.batch * s.spatial);
  const long C = static_cast<long>(s.channels);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < C; ++c) {
    double sum = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* p = x.data() + (b * s.channels + c) * s.spatial;
#pragma omp simd reduction(+ : sum)
      for (std::size_t i = 0; i < s.spatial; ++i) sum += p[i];
    }
    const double mu = sum / n;
    double var = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* p = x.data() + (b * s.channels + c) * s.spatial;
#pragma omp simd reduction(+ : var)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const double d = p[i] - mu;
        var += d * d;
      }
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(is);
    const T scale = static_cast<T>(gamma[c] * is);
    const T shift = static_cast<T>(beta[c] - gamma[c] * mu * is);
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* p = x.data() + (b * s.channels + c) * s.spatial;
      T* q = y.data() + (b * s.channels + c) * s.spatial;
#pragma omp simd
      for (std::size_t i = 0; i < s.spatial; ++i) q[i] = p[i] * scale + shift;
    }
  }
}

template <class T>
void batchnorm_forward_infer(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, std::span<const T> running_mean,
                             std::span<const T> running_var, T eps, std::span<T> y) {
  const long BC = static_cast<long>(s.batch * s.channels);
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < BC; ++bc) {
    const std::size_t c = static_cast<std::size_t>(bc) % s.channels;
    const T is = T(1) / std::sqrt(running_var[c] + eps);
    const T* p = x.data() + bc * s.spatial;
    T* q = y.data() + bc * s.spatial;
#pragma omp simd
    for (std::size_t i = 0; i < s.spatial; ++i) q[i] = gamma[c] * (p[i] - running_mean[c]) * is + beta[c];
  }
}

template <class T>
void batchnorm_backward(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> mean, std::span<const T> inv_std, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dgamma, std::span<T> dbeta) {
  const double n = static_cast<double>(s.batch * s.spatial);
  const long C = static_cast<long>(s.channels);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < C; ++c) {
    const double mu = mean[c], is = inv_std[c];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* p = x.data() + (b * s.channels + c) * s.spatial;
      const T* g = dy.data() + (b * s.channels + c) * s.spatial;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xhat)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * ((p[i] - mu) * is);
      }
    }
    dgamma[c] = static_cast<T>(sum_dy_xhat);
    dbeta[c] = static_cast<T>(sum_dy);
    const double k = gamma[c] * is / n;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* p = x.data() + (b * s.channels + c) * s.spatial;
      const T* g = dy.data() + (b * s.channels + c) * s.spatial;
      T* q = dx.data() + (b * s.channels + c) * s.spatial;
#pragma omp simd
      for (std::size_t i = 0; i < s.spatial; ++i)
        q[i] = static_cast<T>(k * (n * g[i] - sum_dy - ((p[i] - mu) * is) * sum_dy_xhat));
    }
  }
}

template <class T>
void maxpool2_forward(const PoolShape& s, std::span<const T> x, std::span<T> y,
                      std::span<std::uint32_t> argmax) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long BC = static_cast<long>(s.batch * s.channels);
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < BC; ++bc) {
    const std::size_t base = bc * s.height * s.width;
    for (std::size_t h = 0; h < oh; ++h)
      for (std::size_t v = 0; v < ow; ++v) {
        std::size_t best = base + (2 * h) * s.width + 2 * v;
        const std::size_t cand[3] = {best + 1, best + s.width, best + s.width + 1};
        for (auto k : cand)
          if (x[k] > x[best]) best = k;
        const std::size_t o = (bc * oh + h) * ow + v;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
}

template <class T>
void maxpool2_backward(const PoolShape& s, std::span<const T> dy,
                       std::span<const std::uint32_t> argmax, std::span<T> dx) {
  const std::size_t in_plane = s.height * s.width, out_plane = s.out_height() * s.out_width();
  const long BC = static_cast<long>(s.batch * s.channels);
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < BC; ++bc) {
    std::fill(dx.data() + bc * in_plane, dx.data() + (bc + 1) * in_plane, T(0));
    for (std::size_t o = bc * out_plane; o < (bc + 1) * out_plane; ++o) dx[argmax[o]] += dy[o];
  }
}

template <class T>
void time_mean_forward(std::size_t rows, std::size_t width, std::span<const T> x, std::span<T> y) {
  const long R = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < R; ++r) {
    T acc = 0;
    const T* p = x.data() + r * width;
    for (std::size_t v = 0; v < width; ++v) acc += p[v];
    y[r] = acc / static_cast<T>(width);
  }
}

template <class T>
void time_mean_backward(std::size_t rows, std::size_t width, std::span<const T> dy, std::span<T> dx) {
  const long R = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < R; ++r) {
    const T g = dy[r] / static_cast<T>(width);
    T* q = dx.data() + r * width;
    for (std::size_t v = 0; v < width; ++v) q[v] = g;
  }
}

template <class T>
void dense_forward(const DenseShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  const long B = static_cast<long>(s.batch);
#pragma omp parallel for schedule(static)
  for (long b = 0; b < B; ++b) {
    const T* xr = x.data() + b * s.in;
    for (std::size_t o = 0; o < s.out; ++o) {
      const T* wr = w.data() + o * s.in;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < s.in; ++i) acc += xr[i] * wr[i];
      y[b * s.out + o] = acc + bias[o];
    }
  }
}

template <class T>
void dense_backward(const DenseShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const long B = static_cast<long>(s.batch), O = static_cast<long>(s.out);
  if (!dx.empty()) {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < B; ++b) {
      T* q = dx.data() + b * s.in;
      std::fill(q, q + s.in, T(0));
      for (std::size_t o = 0; o < s.out; ++o) {
        const T g = dy[b * s.out + o];
        const T* wr = w.data() + o * s.in;
#pragma omp simd
        for (std::size_t i = 0; i < s.in; ++i) q[i] += g * wr[i];
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (long o = 0; o < O; ++o) {
    T* q = dw.data() + o * s.in;
    std::fill(q, q + s.in, T(0));
    T bacc = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T g = dy[b * s.out + o];
      bacc += g;
      const T* xr = x.data() + b * s.in;
#pragma omp simd
      for (std::size_t i = 0; i < s.in; ++i) q[i] += g * xr[i];
    }
    db[o] = bacc;
  }
}

template <class T>
void relu_forward(std::span<const T> x, std::span<T> y) {
  const long n = static_cast<long>(x.size());
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const long n = static_cast<long>(x.size());
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

}  // namespace crl::kernels::omp
