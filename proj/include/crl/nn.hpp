#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crl/rng.hpp"
#include "crl/tensor.hpp"

namespace crl::nn {

enum class Mode { train, infer };

// A trainable tensor with its gradient. Buffers (normalization running
// statistics) are part of a snapshot but are never touched by an optimizer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool buffer = false;
};

// Layers cache whatever they need during a train-mode forward; backward
// must follow such a forward and returns the input gradient while
// accumulating parameter gradients.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>& out) { (void)out; }
  virtual void init(Rng& rng) { (void)rng; }
  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv3x3 final : public Layer {
 public:
  Conv3x3(std::size_t in_ch, std::size_t out_ch);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;
  void init(Rng& rng) override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv3x3>(*this); }

 private:
  std::size_t in_ch_, out_ch_;
  Param weight_, bias_;
  Tensor input_;
};

// Per-channel batch normalization for (B, C) or (B, C, H, W) inputs.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, float momentum = 0.1f, float eps = 1e-5f);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  std::size_t channels_;
  float momentum_, eps_;
  Param gamma_, beta_, running_mean_, running_var_;
  Tensor input_, mean_, inv_std_;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::string describe() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  Tensor input_;
};

class MaxPool2 final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::string describe() const override { return "maxpool2"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::uint32_t> argmax_;
};

// (B, C, H, W) -> (B, C*H), averaging over the time axis W. With
// `global` set it also averages over H, giving (B, C).
class TimeMeanPool final : public Layer {
 public:
  explicit TimeMeanPool(bool global = false) : global_(global) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::string describe() const override { return global_ ? "global_mean" : "time_mean"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<TimeMeanPool>(*this); }

 private:
  bool global_;
  std::vector<std::size_t> in_shape_;
};

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;
  void init(Rng& rng) override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  std::size_t in_, out_;
  Param weight_, bias_;
  Tensor input_;
};

// Ordered layer stack with value semantics (copies deep-clone every layer).
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& o);
  Sequential& operator=(const Sequential& o);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <class L, class... Args>
  Sequential& add(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  void init(Rng& rng);
  std::string describe() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Shared plumbing for every network: parameter access, flattening, checksum.
class Network {
 public:
  std::vector<Param*> params() { return net_.params(); }
  std::vector<const Param*> params() const { return std::as_const(net_).params(); }
  std::vector<Param*> trainable();

  std::string descriptor() const { return net_.describe(); }
  std::uint64_t arch_hash() const { return fnv1a(descriptor()); }

  // Parameters followed by buffers, in layer order.
  std::vector<float> flatten() const;
  void load(std::span<const float> values);
  std::size_t value_count() const;
  std::uint64_t checksum() const;
  void zero_grad();

 protected:
  Sequential net_;
};

struct EncoderConfig {
  std::size_t freq_bins = 64;
  std::vector<std::size_t> channels = {8, 16, 32, 32};
  bool global_pool = false;  // average over frequency as well as time

  std::size_t output_dim() const;
  void validate() const;
};

// Convolutional encoder: blocks of conv3x3 -> batchnorm -> relu -> maxpool2,
// then mean pooling over time. Frequency position is kept, so the output
// dimension is channels.back() * (freq_bins >> blocks).
class Encoder : public Network {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  // batch: (B, F, L) -> (B, d)
  Tensor forward(const Tensor& batch, Mode mode);
  Tensor backward(const Tensor& d_out) { return net_.backward(d_out); }
  std::size_t output_dim() const { return cfg_.output_dim(); }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
};

// d -> d -> p MLP used only by the self-supervised objectives.
class ProjectionHead : public Network {
 public:
  ProjectionHead(std::size_t input_dim, std::size_t proj_dim, std::uint64_t seed);
  Tensor forward(const Tensor& x, Mode mode) { return net_.forward(x, mode); }
  Tensor backward(const Tensor& dy) { return net_.backward(dy); }
  std::size_t output_dim() const { return proj_dim_; }

 private:
  std::size_t proj_dim_;
};

// A single affine layer d -> num_outputs.
class ClassifierHead : public Network {
 public:
  ClassifierHead(std::size_t input_dim, std::size_t num_outputs, std::uint64_t seed);
  Tensor forward(const Tensor& x, Mode mode) { return net_.forward(x, mode); }
  Tensor backward(const Tensor& dy) { return net_.backward(dy); }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_outputs() const { return num_outputs_; }
  // Input gradient only; used when the head is a frozen teacher.
  Tensor input_gradient(const Tensor& dy) const;

 private:
  std::size_t input_dim_, num_outputs_;
};

// Immutable parameter snapshot of an encoder.
struct EncoderState {
  std::int64_t task_tag = 0;
  std::uint64_t arch_hash = 0;
  std::vector<float> values;
};

EncoderState snapshot(const Encoder& enc, std::int64_t task_tag);
// Throws IntegrityError when the architecture hash or size does not match.
Encoder restore(const EncoderState& state, const EncoderConfig& cfg);
void restore_into(Encoder& enc, const EncoderState& state);

// File layout: uint64 arch_hash, uint64 task_tag, uint64 count, then count
// little-endian float32 values.
void save_state(const EncoderState& state, const std::filesystem::path& path);
EncoderState load_state(const std::filesystem::path& path);

// theta_k <- m * theta_k + (1 - m) * theta_q, element-wise.
void momentum_update(std::span<float> key, std::span<const float> query, double m);

// Key-side copy of the encoder and projection head for MoCo. Never receives
// gradients; only momentum_update changes its parameters.
class MomentumEncoder {
 public:
  MomentumEncoder(const Encoder& enc, const ProjectionHead& proj, double momentum);
  void update(const Encoder& enc, const ProjectionHead& proj);
  // (B, F, L) -> (B, p), batch statistics, no caching for backward.
  Tensor keys(const Tensor& batch);
  double momentum() const { return momentum_; }
  const Encoder& encoder() const { return encoder_; }
  const ProjectionHead& projector() const { return projector_; }

 private:
  Encoder encoder_;
  ProjectionHead projector_;
  double momentum_;
};

}  // namespace crl::nn
