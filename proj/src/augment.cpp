#include "crl/augment.hpp"

#include <algorithm>

#include "crl/error.hpp"

namespace crl {

int AugmentConfig::freq_width(std::size_t freq_bins) const {
  return max_freq_width.value_or(static_cast<int>((freq_bins + 7) / 8));
}

int AugmentConfig::time_width() const { return max_time_width.value_or((segment_len + 7) / 8); }

void AugmentConfig::validate(std::size_t freq_bins) const {
  if (segment_len < 1) throw ConfigError("augment.segment_len must be >= 1");
  if (num_freq_masks < 0 || num_time_masks < 0) throw ConfigError("augment: mask counts must be >= 0");
  const int fw = freq_width(freq_bins), tw = time_width();
  if (fw < 0 || fw > static_cast<int>(freq_bins))
    throw ConfigError("augment.max_freq_width must be in [0, " + std::to_string(freq_bins) + "]");
  if (tw < 0 || tw > segment_len)
    throw ConfigError("augment.max_time_width must be in [0, " + std::to_string(segment_len) + "]");
}

namespace {

Tensor window(const Tensor& features, int length, std::size_t offset) {
  const std::size_t F = features.dim(0), N = features.dim(1), L = static_cast<std::size_t>(length);
  Tensor out({F, L});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t j = 0; j < L; ++j) out.at(f, j) = features.at(f, (offset + j) % N);
  return out;
}

void check_input(const Tensor& features, int length) {
  if (length < 1) throw ConfigError("segment length must be >= 1");
  if (features.rank() != 2 || features.dim(0) < 1 || features.dim(1) < 1)
    throw UsageError("expected a non-empty (F,N) matrix, got " + features.shape_string());
}

}  // namespace

Tensor random_segment(const Tensor& features, int length, Rng& rng) {
  check_input(features, length);
  const std::size_t N = features.dim(1), L = static_cast<std::size_t>(length);
  if (N < L) return window(features, length, 0);
  const auto offset = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(N - L)));
  return window(features, length, offset);
}

Tensor center_segment(const Tensor& features, int length) {
  check_input(features, length);
  const std::size_t N = features.dim(1), L = static_cast<std::size_t>(length);
  return window(features, length, N >= L ? (N - L) / 2 : 0);
}

Tensor spec_augment(Tensor segment, const AugmentConfig& cfg, Rng& rng) {
  const std::size_t F = segment.dim(0), L = segment.dim(1);
  const int fw = std::min<int>(cfg.freq_width(F), static_cast<int>(F));
  const int tw = std::min<int>(cfg.max_time_width.value_or(static_cast<int>((L + 7) / 8)), static_cast<int>(L));
  for (int m = 0; m < cfg.num_freq_masks; ++m) {
    const auto w = static_cast<std::size_t>(uniform_int(rng, 0, fw));
    const auto f0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(F - w)));
    for (std::size_t f = f0; f < f0 + w; ++f)
      for (std::size_t j = 0; j < L; ++j) segment.at(f, j) = cfg.mask_value;
  }
  for (int m = 0; m < cfg.num_time_masks; ++m) {
    const auto w = static_cast<std::size_t>(uniform_int(rng, 0, tw));
    const auto t0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(L - w)));
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t j = t0; j < t0 + w; ++j) segment.at(f, j) = cfg.mask_value;
  }
  return segment;
}

Tensor augment_view(const Tensor& features, const AugmentConfig& cfg, Rng& rng) {
  return spec_augment(random_segment(features, cfg.segment_len, rng), cfg, rng);
}

ViewPair make_view_pair(const SpectrogramClip& clip, const AugmentConfig& cfg, Rng& rng) {
  ViewPair p;
  p.source_clip_id = clip.clip_id;
  p.view_a = augment_view(clip.features, cfg, rng);
  p.view_b = augment_view(clip.features, cfg, rng);
  return p;
}

}  // namespace crl
