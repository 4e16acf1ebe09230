#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "crl/dataspec.hpp"
#include "crl/rng.hpp"
#include "crl/tensor.hpp"

namespace crl {

// Crop length plus SpecAugment-style masking. Unset mask widths resolve to
// ceil(F/8) and ceil(L/8).
struct AugmentConfig {
  int segment_len = 64;
  int num_freq_masks = 2;
  std::optional<int> max_freq_width;
  int num_time_masks = 2;
  std::optional<int> max_time_width;
  float mask_value = 0.0f;
  std::uint64_t seed_stream = 0;

  int freq_width(std::size_t freq_bins) const;
  int time_width() const;
  // Throws ConfigError on negative counts/widths or widths larger than the axis.
  void validate(std::size_t freq_bins) const;
};

struct ViewPair {
  Tensor view_a;
  Tensor view_b;
  std::string source_clip_id;
};

// Contiguous window of `length` frames at a uniform offset; clips shorter
// than `length` are tiled along time from offset 0.
Tensor random_segment(const Tensor& features, int length, Rng& rng);

// Deterministic centre window, used at evaluation time.
Tensor center_segment(const Tensor& features, int length);

// Frequency masks first, then time masks. Each mask draws its width
// uniformly from [0, max] and its start uniformly over the valid range.
Tensor spec_augment(Tensor segment, const AugmentConfig& cfg, Rng& rng);

Tensor augment_view(const Tensor& features, const AugmentConfig& cfg, Rng& rng);

ViewPair make_view_pair(const SpectrogramClip& clip, const AugmentConfig& cfg, Rng& rng);

}  // namespace crl
