#include "wsseg/nn/layers.hpp"

#include <cmath>

namespace wsseg::nn {

Tensor kaiming_normal(const std::vector<int>& shape, int fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

Conv2d::Conv2d(int in_ch, int out_ch, int k, ConvSpec sp, bool with_bias, Rng& rng)
    : spec(sp) {
  const int fan_in = (in_ch / sp.groups) * k * k;
  weight = parameter(kaiming_normal({out_ch, in_ch / sp.groups, k, k}, fan_in, rng));
  if (with_bias) bias = parameter(Tensor({out_ch}));
}

void Conv2d::collect(ParamMap& m, const std::string& prefix) const {
  m.add(prefix + ".weight", weight);
  if (bias) m.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(parameter(Tensor::full({channels}, 1.0f))),
      beta(parameter(Tensor({channels}))),
      running_mean(Tensor({channels})),
      running_var(Tensor::full({channels}, 1.0f)) {}

void BatchNorm2d::collect(ParamMap& m, const std::string& prefix) {
  m.add(prefix + ".gamma", gamma);
  m.add(prefix + ".beta", beta);
  m.add_buffer(prefix + ".running_mean", &running_mean);
  m.add_buffer(prefix + ".running_var", &running_var);
}

Linear::Linear(int in_f, int out_f, Rng& rng) {
  weight = parameter(kaiming_normal({out_f, in_f}, in_f, rng));
  bias = parameter(Tensor({out_f}));
}

void Linear::collect(ParamMap& m, const std::string& prefix) const {
  m.add(prefix + ".weight", weight);
  m.add(prefix + ".bias", bias);
}

Bottleneck::Bottleneck(int in_ch, int width, int out_ch, int stride,
                       int dilation, int groups, bool with_se, Rng& rng)
    : reduce(in_ch, width, 1, ConvSpec{}, rng),
      mid(width, width, 3,
          ConvSpec{.stride = stride, .pad = dilation, .dilation = dilation,
                   .groups = groups},
          false, rng),
      mid_bn(width),
      expand(width, out_ch, 1, ConvSpec{}, false, rng),
      expand_bn(out_ch),
      has_se(with_se) {
  if (stride != 1 || in_ch != out_ch) {
    proj = Conv2d(in_ch, out_ch, 1, ConvSpec{.stride = stride}, false, rng);
    proj_bn = BatchNorm2d(out_ch);
    has_proj = true;
  }
  if (with_se) se = SqueezeExcite(out_ch, 16, rng);
}

Var Bottleneck::forward(const Var& x, bool training) {
  Var y = reduce.forward(x, training);
  y = relu(mid_bn.forward(mid.forward(y), training));
  y = expand_bn.forward(expand.forward(y), training);
  if (has_se) y = se.forward(y);
  Var shortcut = has_proj ? proj_bn.forward(proj.forward(x), training) : x;
  return relu(add(y, shortcut));
}

void Bottleneck::collect(ParamMap& m, const std::string& prefix) {
  reduce.collect(m, prefix + ".reduce");
  mid.collect(m, prefix + ".mid");
  mid_bn.collect(m, prefix + ".mid_bn");
  expand.collect(m, prefix + ".expand");
  expand_bn.collect(m, prefix + ".expand_bn");
  if (has_proj) {
    proj.collect(m, prefix + ".proj");
    proj_bn.collect(m, prefix + ".proj_bn");
  }
  if (has_se) se.collect(m, prefix + ".se");
}

}  // namespace wsseg::nn
