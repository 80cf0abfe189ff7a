#include "wsseg/nn/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace wsseg::nn {

namespace {

class SgdMomentum : public Optimizer {
 public:
  explicit SgdMomentum(const OptimConfig& cfg) : Optimizer(cfg) {}

  void step(const std::vector<Var>& params) override {
    if (velocity_.size() != params.size())
      velocity_.assign(params.size(), Tensor());
    for (size_t p = 0; p < params.size(); ++p) {
      Node& node = *params[p];
      if (!node.has_grad()) continue;
      Tensor& v = velocity_[p];
      if (v.empty()) v = Tensor(node.value.shape());
      const float mu = static_cast<float>(cfg_.momentum);
      const float wd = static_cast<float>(cfg_.weight_decay);
      const float lr = static_cast<float>(lr_);
      for (int64_t i = 0; i < node.value.numel(); ++i) {
        const float g = node.grad[i] + wd * node.value[i];
        v[i] = mu * v[i] + g;
        node.value[i] -= lr * v[i];
      }
    }
  }

 private:
  std::vector<Tensor> velocity_;
};

class AdamBase : public Optimizer {
 public:
  AdamBase(const OptimConfig& cfg, bool rectified)
      : Optimizer(cfg), rectified_(rectified) {}

  void step(const std::vector<Var>& params) override {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), Tensor());
      v_.assign(params.size(), Tensor());
    }
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);

    // RAdam variance rectification (Liu et al.): fall back to an
    // unadapted SGD-with-momentum style update while the variance
    // estimate is untrustworthy (rho_t <= 4).
    double r_t = 1.0;
    bool use_adaptive = true;
    if (rectified_) {
      const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
      const double rho_t =
          rho_inf - 2.0 * t_ * std::pow(b2, t_) / bc2;
      if (rho_t > 4.0) {
        r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                        ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      } else {
        use_adaptive = false;
      }
    }

    for (size_t p = 0; p < params.size(); ++p) {
      Node& node = *params[p];
      if (!node.has_grad()) continue;
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      if (m.empty()) {
        m = Tensor(node.value.shape());
        v = Tensor(node.value.shape());
      }
      const float wd = static_cast<float>(cfg_.weight_decay);
      for (int64_t i = 0; i < node.value.numel(); ++i) {
        const double g = node.grad[i] + wd * node.value[i];
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
        const double mhat = m[i] / bc1;
        double update;
        if (use_adaptive) {
          const double vhat = std::sqrt(v[i] / bc2);
          update = lr_ * r_t * mhat / (vhat + cfg_.eps);
        } else {
          update = lr_ * mhat;
        }
        node.value[i] -= static_cast<float>(update);
      }
    }
  }

 private:
  bool rectified_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const OptimConfig& cfg) {
  if (cfg.method == "sgd-momentum") return std::make_unique<SgdMomentum>(cfg);
  if (cfg.method == "adam") return std::make_unique<AdamBase>(cfg, false);
  if (cfg.method == "radam") return std::make_unique<AdamBase>(cfg, true);
  throw ConfigError("unknown optimizer '" + cfg.method + "'");
}

}  // namespace wsseg::nn
