#include "crl/optim.hpp"

#include <cmath>

#include "crl/error.hpp"

namespace crl::nn {

Optimizer::Optimizer(const OptimConfig& cfg, std::vector<Param*> params) : cfg_(cfg), params_(std::move(params)) {
  if (!(cfg_.lr > 0)) throw ConfigError("optimizer: learning rate must be positive");
  for (auto* p : params_) {
    if (p->buffer) throw UsageError("optimizer: buffer '" + p->name + "' is not trainable");
    m1_.emplace_back(p->value.size(), 0.0f);
    m2_.emplace_back(cfg_.kind == OptimKind::adam ? p->value.size() : 0, 0.0f);
  }
}

void Optimizer::zero_grad() {
  for (auto* p : params_) p->grad.fill(0.0f);
}

void Optimizer::step(double loss_value, const std::string& where) {
  if (!std::isfinite(loss_value))
    throw TrainingError(where + (where.empty() ? "" : ": ") + "non-finite loss " + std::to_string(loss_value));
  for (auto* p : params_)
    for (float g : p->grad.data())
      if (!std::isfinite(g)) throw TrainingError(where + (where.empty() ? "" : ": ") + "non-finite gradient in " + p->name);

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k]->value.data();
    auto g = params_[k]->grad.data();
    auto& m = m1_[k];
    if (cfg_.kind == OptimKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg_.weight_decay * w[i];
        m[i] = static_cast<float>(cfg_.momentum * m[i] + gi);
        w[i] = static_cast<float>(w[i] - cfg_.lr * m[i]);
      }
    } else {
      auto& v = m2_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg_.weight_decay * w[i];
        m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
        v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        w[i] = static_cast<float>(w[i] - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }
  zero_grad();
}

OptimKind parse_optim_kind(const std::string& s) {
  if (s == "adam") return OptimKind::adam;
  if (s == "sgd") return OptimKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

}  // namespace crl::nn
