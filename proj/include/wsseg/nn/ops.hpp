#pragma once

#include "wsseg/nn/autograd.hpp"

namespace wsseg::nn {

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_size(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// x: [N,Cin,H,W], w: [Cout,Cin/groups,kh,kw], b: [Cout] or null.
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec);

// x: [N,F], w: [K,F], b: [K] or null -> [N,K]
Var linear(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
// Elementwise product with a fixed (non-learnable) tensor, e.g. drop masks.
Var mul_mask(const Var& x, Tensor mask);
// y[n,c,h,w] = x[n,c,h,w] * s[n,c]; used by squeeze-excitation.
Var scale_channels(const Var& x, const Var& s);

Var max_pool2d(const Var& x, int k, int stride, int pad);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var concat_channels(const std::vector<Var>& xs);

// Batch statistics in training mode (running stats updated in place);
// running statistics in eval mode.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor& running_mean, Tensor& running_var, bool training,
                 float momentum = 0.1f, float eps = 1e-5f);

}  // namespace wsseg::nn
