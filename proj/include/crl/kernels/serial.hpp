#pragma once

// Straightforward loop-nest reference kernels. They define the semantics the
// OpenMP kernels in omp.hpp must reproduce and are only used by tests and the
// benchmark.

#include <cmath>
#include <cstdint>
#include <span>

#include "crl/kernels/shapes.hpp"

namespace crl::kernels::serial {

template <class T>
void conv3x3_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                     std::span<const T> bias, std::span<T> y) {
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t oc = 0; oc < s.out_ch; ++oc)
      for (long h = 0; h < H; ++h)
        for (long v = 0; v < W; ++v) {
          T acc = bias[oc];
          for (std::size_t ic = 0; ic < s.in_ch; ++ic)
            for (long kh = 0; kh < 3; ++kh)
              for (long kw = 0; kw < 3; ++kw) {
                const long ih = h + kh - 1, iw = v + kw - 1;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w[((oc * s.in_ch + ic) * 3 + kh) * 3 + kw] *
                       x[((b * s.in_ch + ic) * H + ih) * W + iw];
              }
          y[((b * s.out_ch + oc) * H + h) * W + v] = acc;
        }
}

// Overwrites dx, dw, db.
template <class T>
void conv3x3_backward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  for (auto& v : dx) v = T(0);
  for (auto& v : dw) v = T(0);
  for (auto& v : db) v = T(0);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t oc = 0; oc < s.out_ch; ++oc)
      for (long h = 0; h < H; ++h)
        for (long v = 0; v < W; ++v) {
          const T g = dy[((b * s.out_ch + oc) * H + h) * W + v];
          db[oc] += g;
          for (std::size_t ic = 0; ic < s.in_ch; ++ic)
            for (long kh = 0; kh < 3; ++kh)
              for (long kw = 0; kw < 3; ++kw) {
                const long ih = h + kh - 1, iw = v + kw - 1;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                const std::size_t xi = ((b * s.in_ch + ic) * H + ih) * W + iw;
                const std::size_t wi = ((oc * s.in_ch + ic) * 3 + kh) * 3 + kw;
                dw[wi] += g * x[xi];
                dx[xi] += g * w[wi];
              }
        }
}

// Training-mode batch normalization. Saves per-channel mean and inverse std.
template <class T>
void batchnorm_forward_train(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> y, std::span<T> mean,
                             std::span<T> inv_std) {
  const double n = static_cast<double>(s.batch * s.spatial);
  for (std::size_t c = 0; c < s.channels; ++c) {
    double sum = 0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.spatial; ++i) sum += x[(b * s.channels + c) * s.spatial + i];
    const double mu = sum / n;
    double var = 0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const double d = x[(b * s.channels + c) * s.spatial + i] - mu;
        var += d * d;
      }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(is);
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const std::size_t k = (b * s.channels + c) * s.spatial + i;
        y[k] = static_cast<T>(gamma[c] * (x[k] - mu) * is + beta[c]);
      }
  }
}

template <class T>
void batchnorm_forward_infer(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, std::span<const T> running_mean,
                             std::span<const T> running_var, T eps, std::span<T> y) {
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t c = 0; c < s.channels; ++c) {
      const T is = T(1) / std::sqrt(running_var[c] + eps);
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const std::size_t k = (b * s.channels + c) * s.spatial + i;
        y[k] = gamma[c] * (x[k] - running_mean[c]) * is + beta[c];
      }
    }
}

// Overwrites dx, dgamma, dbeta.
template <class T>
void batchnorm_backward(const NormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> mean, std::span<const T> inv_std, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dgamma, std::span<T> dbeta) {
  const double n = static_cast<double>(s.batch * s.spatial);
  for (std::size_t c = 0; c < s.channels; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const std::size_t k = (b * s.channels + c) * s.spatial + i;
        const double xhat = (x[k] - mean[c]) * inv_std[c];
        sum_dy += dy[k];
        sum_dy_xhat += dy[k] * xhat;
      }
    dgamma[c] = static_cast<T>(sum_dy_xhat);
    dbeta[c] = static_cast<T>(sum_dy);
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.spatial; ++i) {
        const std::size_t k = (b * s.channels + c) * s.spatial + i;
        const double xhat = (x[k] - mean[c]) * inv_std[c];
        dx[k] = static_cast<T>(gamma[c] * inv_std[c] / n * (n * dy[k] - sum_dy - xhat * sum_dy_xhat));
      }
  }
}

template <class T>
void maxpool2_forward(const PoolShape& s, std::span<const T> x, std::span<T> y,
                      std::span<std::uint32_t> argmax) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc)
    for (std::size_t h = 0; h < oh; ++h)
      for (std::size_t v = 0; v < ow; ++v) {
        std::size_t best = bc * s.height * s.width + (2 * h) * s.width + 2 * v;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dv = 0; dv < 2; ++dv) {
            const std::size_t k = bc * s.height * s.width + (2 * h + dh) * s.width + 2 * v + dv;
            if (x[k] > x[best]) best = k;
          }
        const std::size_t o = (bc * oh + h) * ow + v;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

template <class T>
void maxpool2_backward(const PoolShape& s, std::span<const T> dy,
                       std::span<const std::uint32_t> argmax, std::span<T> dx) {
  for (auto& v : dx) v = T(0);
  for (std::size_t o = 0; o < s.output_size(); ++o) dx[argmax[o]] += dy[o];
}

// (B, C, H, W) -> (B, C*H): mean over the last (time) axis.
template <class T>
void time_mean_forward(std::size_t rows, std::size_t width, std::span<const T> x, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t v = 0; v < width; ++v) acc += x[r * width + v];
    y[r] = acc / static_cast<T>(width);
  }
}

template <class T>
void time_mean_backward(std::size_t rows, std::size_t width, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t v = 0; v < width; ++v) dx[r * width + v] = dy[r] / static_cast<T>(width);
}

// y = x W^T + b with W stored (out, in).
template <class T>
void dense_forward(const DenseShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t o = 0; o < s.out; ++o) {
      T acc = bias[o];
      for (std::size_t i = 0; i < s.in; ++i) acc += x[b * s.in + i] * w[o * s.in + i];
      y[b * s.out + o] = acc;
    }
}

// Overwrites dx (if non-empty), dw, db.
template <class T>
void dense_backward(const DenseShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  if (!dx.empty())
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t i = 0; i < s.in; ++i) {
        T acc = 0;
        for (std::size_t o = 0; o < s.out; ++o) acc += dy[b * s.out + o] * w[o * s.in + i];
        dx[b * s.in + i] = acc;
      }
  for (std::size_t o = 0; o < s.out; ++o) {
    T bacc = 0;
    for (std::size_t b = 0; b < s.batch; ++b) bacc += dy[b * s.out + o];
    db[o] = bacc;
    for (std::size_t i = 0; i < s.in; ++i) {
      T acc = 0;
      for (std::size_t b = 0; b < s.batch; ++b) acc += dy[b * s.out + o] * x[b * s.in + i];
      dw[o * s.in + i] = acc;
    }
  }
}

template <class T>
void relu_forward(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

}  // namespace crl::kernels::serial
