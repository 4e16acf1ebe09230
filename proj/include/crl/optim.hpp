#pragma once

#include <string>
#include <vector>

#include "crl/nn.hpp"

namespace crl::nn {

enum class OptimKind { adam, sgd };

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First-order optimizer over an explicit list of trainable parameters.
// Anything not in the list (teachers, frozen encoders) is never touched.
class Optimizer {
 public:
  Optimizer(const OptimConfig& cfg, std::vector<Param*> params);

  // Applies one update from the accumulated gradients, then zeroes them.
  // Throws TrainingError if the loss or any gradient is non-finite; `where`
  // is prefixed to the diagnostic.
  void step(double loss_value, const std::string& where = {});
  void zero_grad();
  long steps() const { return steps_; }

 private:
  OptimConfig cfg_;
  std::vector<Param*> params_;
  std::vector<std::vector<float>> m1_, m2_;
  long steps_ = 0;
};

OptimKind parse_optim_kind(const std::string& s);

}  // namespace crl::nn
