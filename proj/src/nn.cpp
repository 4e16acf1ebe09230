#include "crl/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "crl/error.hpp"
#include "crl/kernels/omp.hpp"

namespace crl::nn {

namespace k = crl::kernels::omp;

namespace {

Param make_param(std::string name, std::vector<std::size_t> shape, bool buffer = false, float fill = 0.0f) {
  Param p;
  p.name = std::move(name);
  p.value = Tensor(shape, fill);
  if (!buffer) p.grad = Tensor(shape);
  p.buffer = buffer;
  return p;
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (auto& v : t.data()) v = static_cast<float>(uniform_real(rng, -bound, bound));
}

void add_into(Tensor& acc, const Tensor& g) {
  auto a = acc.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

// ---- Conv3x3 ----

Conv3x3::Conv3x3(std::size_t in_ch, std::size_t out_ch)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      weight_(make_param("conv.weight", {out_ch, in_ch, 3, 3})),
      bias_(make_param("conv.bias", {out_ch})) {}

void Conv3x3::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch_ * 9));
  fill_uniform(weight_.value, rng, std::sqrt(6.0) * bound / std::sqrt(2.0));
  fill_uniform(bias_.value, rng, bound);
}

Tensor Conv3x3::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != in_ch_)
    throw UsageError("conv3x3: expected (B," + std::to_string(in_ch_) + ",H,W), got " + x.shape_string());
  const kernels::ConvShape s{x.dim(0), in_ch_, out_ch_, x.dim(2), x.dim(3)};
  Tensor y({s.batch, out_ch_, s.height, s.width});
  k::conv3x3_forward<float>(s, x.data(), weight_.value.data(), bias_.value.data(), y.data());
  if (mode == Mode::train) input_ = x;
  return y;
}

Tensor Conv3x3::backward(const Tensor& dy) {
  const kernels::ConvShape s{input_.dim(0), in_ch_, out_ch_, input_.dim(2), input_.dim(3)};
  Tensor dx(input_.shape());
  Tensor dw(weight_.value.shape()), db(bias_.value.shape());
  k::conv3x3_backward<float>(s, input_.data(), weight_.value.data(), dy.data(), dx.data(), dw.data(),
                             db.data());
  add_into(weight_.grad, dw);
  add_into(bias_.grad, db);
  return dx;
}

void Conv3x3::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

std::string Conv3x3::describe() const {
  return "conv3x3(" + std::to_string(in_ch_) + "->" + std::to_string(out_ch_) + ")";
}

// ---- BatchNorm ----

BatchNorm::BatchNorm(std::size_t channels, float momentum, float eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(make_param("bn.gamma", {channels}, false, 1.0f)),
      beta_(make_param("bn.beta", {channels})),
      running_mean_(make_param("bn.running_mean", {channels}, true, 0.0f)),
      running_var_(make_param("bn.running_var", {channels}, true, 1.0f)) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != channels_)
    throw UsageError("batchnorm: unexpected input shape " + x.shape_string());
  const kernels::NormShape s{x.dim(0), channels_, x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
  Tensor y(x.shape());
  if (mode == Mode::infer) {
    k::batchnorm_forward_infer<float>(s, x.data(), gamma_.value.data(), beta_.value.data(),
                                      running_mean_.value.data(), running_var_.value.data(), eps_,
                                      y.data());
    return y;
  }
  if (s.batch * s.spatial < 2) throw UsageError("batchnorm: training mode needs more than one value per channel");
  mean_ = Tensor({channels_});
  inv_std_ = Tensor({channels_});
  k::batchnorm_forward_train<float>(s, x.data(), gamma_.value.data(), beta_.value.data(), eps_, y.data(),
                                    mean_.data(), inv_std_.data());
  const double n = static_cast<double>(s.batch * s.spatial);
  for (std::size_t c = 0; c < channels_; ++c) {
    const double var = 1.0 / (double(inv_std_[c]) * inv_std_[c]) - eps_;
    const double unbiased = var * n / (n - 1.0);
    running_mean_.value[c] = static_cast<float>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean_[c]);
    running_var_.value[c] = static_cast<float>((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
  }
  input_ = x;
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const kernels::NormShape s{input_.dim(0), channels_, input_.rank() == 4 ? input_.dim(2) * input_.dim(3) : 1};
  Tensor dx(input_.shape()), dg({channels_}), dbeta({channels_});
  k::batchnorm_backward<float>(s, input_.data(), gamma_.value.data(), mean_.data(), inv_std_.data(), dy.data(),
                               dx.data(), dg.data(), dbeta.data());
  add_into(gamma_.grad, dg);
  add_into(beta_.grad, dbeta);
  return dx;
}

void BatchNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

std::string BatchNorm::describe() const { return "batchnorm(" + std::to_string(channels_) + ")"; }

// ---- Relu / pooling ----

Tensor Relu::forward(const Tensor& x, Mode mode) {
  Tensor y(x.shape());
  k::relu_forward<float>(x.data(), y.data());
  if (mode == Mode::train) input_ = x;
  return y;
}

Tensor Relu::backward(const Tensor& dy) {
  Tensor dx(input_.shape());
  k::relu_backward<float>(input_.data(), dy.data(), dx.data());
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) throw UsageError("maxpool2: bad input " + x.shape_string());
  const kernels::PoolShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  Tensor y({s.batch, s.channels, s.out_height(), s.out_width()});
  std::vector<std::uint32_t> argmax(s.output_size());
  k::maxpool2_forward<float>(s, x.data(), y.data(), argmax);
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    argmax_ = std::move(argmax);
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) {
  const kernels::PoolShape s{in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]};
  Tensor dx(in_shape_);
  k::maxpool2_backward<float>(s, dy.data(), argmax_, dx.data());
  return dx;
}

Tensor TimeMeanPool::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4) throw UsageError("time_mean: bad input " + x.shape_string());
  const std::size_t rows = global_ ? x.dim(0) * x.dim(1) : x.dim(0) * x.dim(1) * x.dim(2);
  Tensor y({x.dim(0), global_ ? x.dim(1) : x.dim(1) * x.dim(2)});
  k::time_mean_forward<float>(rows, x.size() / rows, x.data(), y.data());
  if (mode == Mode::train) in_shape_ = x.shape();
  return y;
}

Tensor TimeMeanPool::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const std::size_t rows = global_ ? in_shape_[0] * in_shape_[1] : in_shape_[0] * in_shape_[1] * in_shape_[2];
  k::time_mean_backward<float>(rows, dx.size() / rows, dy.data(), dx.data());
  return dx;
}

// ---- Dense ----

Dense::Dense(std::size_t in, std::size_t out)
    : in_(in), out_(out), weight_(make_param("dense.weight", {out, in})), bias_(make_param("dense.bias", {out})) {}

void Dense::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  fill_uniform(weight_.value, rng, bound);
  fill_uniform(bias_.value, rng, bound);
}

Tensor Dense::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw UsageError("dense: expected (B," + std::to_string(in_) + "), got " + x.shape_string());
  const kernels::DenseShape s{x.dim(0), in_, out_};
  Tensor y({s.batch, out_});
  k::dense_forward<float>(s, x.data(), weight_.value.data(), bias_.value.data(), y.data());
  if (mode == Mode::train) input_ = x;
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  const kernels::DenseShape s{input_.dim(0), in_, out_};
  Tensor dx(input_.shape()), dw(weight_.value.shape()), db({out_});
  k::dense_backward<float>(s, input_.data(), weight_.value.data(), dy.data(), dx.data(), dw.data(), db.data());
  add_into(weight_.grad, dw);
  add_into(bias_.grad, db);
  return dx;
}

void Dense::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

std::string Dense::describe() const {
  return "dense(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

// ---- Sequential ----

Sequential::Sequential(const Sequential& o) {
  layers_.reserve(o.layers_.size());
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& o) {
  if (this != &o) {
    Sequential tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

std::vector<const Param*> Sequential::params() const {
  std::vector<Param*> tmp;
  for (auto& l : layers_) l->collect(tmp);
  return {tmp.begin(), tmp.end()};
}

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

std::string Sequential::describe() const {
  std::string s;
  for (const auto& l : layers_) {
    if (!s.empty()) s += " | ";
    s += l->describe();
  }
  return s;
}

// ---- Network ----

std::vector<Param*> Network::trainable() {
  std::vector<Param*> out;
  for (auto* p : params())
    if (!p->buffer) out.push_back(p);
  return out;
}

std::vector<float> Network::flatten() const {
  std::vector<float> out;
  for (bool buffers : {false, true})
    for (const auto* p : params())
      if (p->buffer == buffers) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
  return out;
}

std::size_t Network::value_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->value.size();
  return n;
}

void Network::load(std::span<const float> values) {
  if (values.size() != value_count())
    throw IntegrityError("parameter count mismatch: expected " + std::to_string(value_count()) + ", got " +
                         std::to_string(values.size()));
  std::size_t off = 0;
  for (bool buffers : {false, true})
    for (auto* p : params())
      if (p->buffer == buffers) {
        auto dst = p->value.data();
        std::copy(values.begin() + off, values.begin() + off + dst.size(), dst.begin());
        off += dst.size();
      }
}

std::uint64_t Network::checksum() const {
  const auto v = flatten();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float f : v) {
    h ^= std::bit_cast<std::uint32_t>(f);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Network::zero_grad() {
  for (auto* p : params())
    if (!p->buffer) p->grad.fill(0.0f);
}

// ---- Encoder / heads ----

std::size_t EncoderConfig::output_dim() const {
  return global_pool ? channels.back() : channels.back() * (freq_bins >> channels.size());
}

void EncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("encoder.channels must not be empty");
  const std::size_t div = std::size_t{1} << channels.size();
  if (freq_bins < div || freq_bins % div != 0)
    throw ConfigError("encoder: freq_bins (" + std::to_string(freq_bins) + ") must be a multiple of " +
                      std::to_string(div));
}

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::size_t in = 1;
  for (auto ch : cfg_.channels) {
    net_.add<Conv3x3>(in, ch).add<BatchNorm>(ch).add<Relu>().add<MaxPool2>();
    in = ch;
  }
  net_.add<TimeMeanPool>(cfg_.global_pool);
  Rng rng(mix_seed(seed, "encoder-init"));
  net_.init(rng);
}

Tensor Encoder::forward(const Tensor& batch, Mode mode) {
  if (batch.rank() != 3 || batch.dim(1) != cfg_.freq_bins)
    throw UsageError("encoder: expected (B," + std::to_string(cfg_.freq_bins) + ",L), got " + batch.shape_string());
  const std::size_t min_len = std::size_t{1} << cfg_.channels.size();
  if (batch.dim(2) < min_len) throw UsageError("encoder: segment shorter than " + std::to_string(min_len));
  for (float v : batch.data())
    if (!std::isfinite(v)) throw UsageError("encoder: non-finite input");
  Tensor x({batch.dim(0), 1, batch.dim(1), batch.dim(2)}, batch.storage());
  return net_.forward(x, mode);
}

ProjectionHead::ProjectionHead(std::size_t input_dim, std::size_t proj_dim, std::uint64_t seed)
    : proj_dim_(proj_dim) {
  net_.add<Dense>(input_dim, input_dim).add<BatchNorm>(input_dim).add<Relu>().add<Dense>(input_dim, proj_dim);
  Rng rng(mix_seed(seed, "projection-init"));
  net_.init(rng);
}

ClassifierHead::ClassifierHead(std::size_t input_dim, std::size_t num_outputs, std::uint64_t seed)
    : input_dim_(input_dim), num_outputs_(num_outputs) {
  net_.add<Dense>(input_dim, num_outputs);
  Rng rng(mix_seed(seed, "classifier-init"));
  net_.init(rng);
}

Tensor ClassifierHead::input_gradient(const Tensor& dy) const {
  const auto ps = params();
  const Tensor& w = ps[0]->value;
  const std::size_t B = dy.dim(0);
  Tensor dx({B, input_dim_});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < num_outputs_; ++o) {
      const float g = dy.at(b, o);
      for (std::size_t i = 0; i < input_dim_; ++i) dx.at(b, i) += g * w.at(o, i);
    }
  return dx;
}

// ---- snapshots ----

EncoderState snapshot(const Encoder& enc, std::int64_t task_tag) {
  return EncoderState{task_tag, enc.arch_hash(), enc.flatten()};
}

void restore_into(Encoder& enc, const EncoderState& state) {
  if (state.arch_hash != enc.arch_hash()) throw IntegrityError("encoder state: architecture hash mismatch");
  enc.load(state.values);
}

Encoder restore(const EncoderState& state, const EncoderConfig& cfg) {
  Encoder enc(cfg, 0);
  restore_into(enc, state);
  return enc;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IntegrityError("encoder state: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

}  // namespace

void save_state(const EncoderState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_u64(os, state.arch_hash);
  write_u64(os, static_cast<std::uint64_t>(state.task_tag));
  write_u64(os, state.values.size());
  for (float f : state.values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!os) throw Error("failed writing " + path.string());
}

EncoderState load_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("missing encoder state " + path.string());
  EncoderState st;
  st.arch_hash = read_u64(is);
  st.task_tag = static_cast<std::int64_t>(read_u64(is));
  const auto n = read_u64(is);
  st.values.resize(n);
  for (auto& f : st.values) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IntegrityError("encoder state: truncated body");
    const std::uint32_t bits = b[0] | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                               (std::uint32_t{b[3]} << 24);
    f = std::bit_cast<float>(bits);
  }
  return st;
}

// ---- momentum ----

void momentum_update(std::span<float> key, std::span<const float> query, double m) {
  if (key.size() != query.size()) throw UsageError("momentum_update: shape mismatch");
  if (!(m >= 0.0 && m < 1.0)) throw UsageError("momentum_update: momentum must be in [0,1)");
  const float mf = static_cast<float>(m), qf = static_cast<float>(1.0 - m);
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = mf * key[i] + qf * query[i];
}

MomentumEncoder::MomentumEncoder(const Encoder& enc, const ProjectionHead& proj, double momentum)
    : encoder_(enc), projector_(proj), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("moco momentum must be in [0,1)");
}

void MomentumEncoder::update(const Encoder& enc, const ProjectionHead& proj) {
  auto apply = [&](Network& key, const Network& query) {
    auto kp = key.trainable();
    std::vector<const Param*> qp;
    for (const auto* p : query.params())
      if (!p->buffer) qp.push_back(p);
    if (kp.size() != qp.size()) throw UsageError("momentum_update: architecture mismatch");
    for (std::size_t i = 0; i < kp.size(); ++i) momentum_update(kp[i]->value.data(), qp[i]->value.data(), momentum_);
  };
  apply(encoder_, enc);
  apply(projector_, proj);
}

Tensor MomentumEncoder::keys(const Tensor& batch) {
  // Train-mode normalization (batch statistics) like the query side.
  return projector_.forward(encoder_.forward(batch, Mode::train), Mode::train);
}

}  // namespace crl::nn
