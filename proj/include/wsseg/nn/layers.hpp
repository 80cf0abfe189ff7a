#pragma once

#include <string>
#include <vector>

#include "wsseg/nn/ops.hpp"
#include "wsseg/rng.hpp"

namespace wsseg::nn {

// Named parameter/buffer registry, shared by optimizers and checkpoints.
struct ParamMap {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& name, const Var& v) {
    if (v) params.emplace_back(name, v);
  }
  void add_buffer(const std::string& name, Tensor* t) {
    buffers.emplace_back(name, t);
  }
  std::vector<Var> vars() const {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& [n, v] : params) out.push_back(v);
    return out;
  }
};

Tensor kaiming_normal(const std::vector<int>& shape, int fan_in, Rng& rng);

struct Conv2d {
  Var weight, bias;
  ConvSpec spec;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, ConvSpec spec, bool with_bias, Rng& rng);
  Var forward(const Var& x) const { return conv2d(x, weight, bias, spec); }
  void collect(ParamMap& m, const std::string& prefix) const;
};

struct BatchNorm2d {
  Var gamma, beta;
  Tensor running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Var forward(const Var& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training);
  }
  void collect(ParamMap& m, const std::string& prefix);
};

struct Linear {
  Var weight, bias;

  Linear() = default;
  Linear(int in_f, int out_f, Rng& rng);
  Var forward(const Var& x) const { return linear(x, weight, bias); }
  void collect(ParamMap& m, const std::string& prefix) const;
};

// conv -> BN -> ReLU, the workhorse block of every backbone here.
struct ConvBnRelu {
  Conv2d conv;
  BatchNorm2d bn;

  ConvBnRelu() = default;
  ConvBnRelu(int in_ch, int out_ch, int k, ConvSpec spec, Rng& rng)
      : conv(in_ch, out_ch, k, spec, /*with_bias=*/false, rng), bn(out_ch) {}
  Var forward(const Var& x, bool training) {
    return relu(bn.forward(conv.forward(x), training));
  }
  void collect(ParamMap& m, const std::string& prefix) {
    conv.collect(m, prefix + ".conv");
    bn.collect(m, prefix + ".bn");
  }
};

// Channel attention: GAP -> fc -> ReLU -> fc -> sigmoid -> channel scale.
struct SqueezeExcite {
  Linear fc1, fc2;

  SqueezeExcite() = default;
  SqueezeExcite(int channels, int reduction, Rng& rng)
      : fc1(channels, std::max(1, channels / reduction), rng),
        fc2(std::max(1, channels / reduction), channels, rng) {}
  Var forward(const Var& x) {
    Var s = sigmoid(fc2.forward(relu(fc1.forward(global_avg_pool(x)))));
    return scale_channels(x, s);
  }
  void collect(ParamMap& m, const std::string& prefix) {
    fc1.collect(m, prefix + ".fc1");
    fc2.collect(m, prefix + ".fc2");
  }
};

// 1x1 reduce -> 3x3 (stride/dilation/groups) -> 1x1 expand with residual
// add; projection shortcut when shape changes. Optional squeeze-excitation.
struct Bottleneck {
  ConvBnRelu reduce;
  Conv2d mid;
  BatchNorm2d mid_bn;
  Conv2d expand;
  BatchNorm2d expand_bn;
  Conv2d proj;
  BatchNorm2d proj_bn;
  bool has_proj = false;
  bool has_se = false;
  SqueezeExcite se;

  Bottleneck() = default;
  Bottleneck(int in_ch, int width, int out_ch, int stride, int dilation,
             int groups, bool with_se, Rng& rng);
  Var forward(const Var& x, bool training);
  void collect(ParamMap& m, const std::string& prefix);
};

}  // namespace wsseg::nn
