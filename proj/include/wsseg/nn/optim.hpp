#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wsseg/nn/autograd.hpp"

namespace wsseg::nn {

struct OptimConfig {
  std::string method = "sgd-momentum";  // sgd-momentum | adam | radam
  double lr = 6e-5;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// L2 weight decay is folded into the gradient for all three methods,
// matching the common PyTorch definitions the training settings came from.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<Var>& params) = 0;
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 protected:
  explicit Optimizer(const OptimConfig& cfg) : cfg_(cfg), lr_(cfg.lr) {}
  OptimConfig cfg_;
  double lr_;
};

// Throws ConfigError on an unknown method name.
std::unique_ptr<Optimizer> make_optimizer(const OptimConfig& cfg);

}  // namespace wsseg::nn
