#pragma once

#include <cstddef>

namespace crl::kernels {

// NCHW activations; 3x3 kernels, stride 1, zero padding 1.
struct ConvShape {
  std::size_t batch = 0;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const { return height * width; }
  std::size_t input_size() const { return batch * in_ch * plane(); }
  std::size_t output_size() const { return batch * out_ch * plane(); }
  std::size_t weight_size() const { return out_ch * in_ch * 9; }
};

// Channel-wise normalization over (batch, spatial); spatial = 1 for dense features.
struct NormShape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t spatial = 1;

  std::size_t size() const { return batch * channels * spatial; }
};

// 2x2 max pooling, stride 2, floor semantics.
struct PoolShape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t out_height() const { return height / 2; }
  std::size_t out_width() const { return width / 2; }
  std::size_t input_size() const { return batch * channels * height * width; }
  std::size_t output_size() const { return batch * channels * out_height() * out_width(); }
};

struct DenseShape {
  std::size_t batch = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

}  // namespace crl::kernels
