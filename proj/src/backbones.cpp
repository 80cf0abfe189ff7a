#include "wsseg/backbones.hpp"

namespace wsseg::backbones {

using nn::ConvSpec;
using nn::Var;

bool is_known_backbone(const std::string& id) {
  return id == "toy" || id == "resnet50-like" || id == "seresnext50-like";
}

FiveStageBackbone::FiveStageBackbone(const std::string& id, int in_channels,
                                     int output_stride, uint64_t seed) {
  if (!is_known_backbone(id)) throw ConfigError("unknown backbone '" + id + "'");
  if (output_stride != 8 && output_stride != 16 && output_stride != 32)
    throw ConfigError("output_stride must be 8, 16 or 32");
  Rng rng(Rng::derive(seed, 0x42424f4eULL /* "BBON" */));

  // Dilation plan: stages whose nominal stride exceeds output_stride run at
  // stride 1 with rates 2 and 4 (the standard construction).
  const int nominal[5] = {2, 4, 8, 16, 32};
  int dil[5] = {1, 1, 1, 1, 1};
  int stride_in[5];  // stride applied entering each stage
  int rate = 1;
  for (int s = 0; s < 5; ++s) {
    if (nominal[s] > output_stride) {
      stride_in[s] = 1;
      rate *= 2;
      dil[s] = rate;
    } else {
      stride_in[s] = 2;
    }
    stage_strides_.push_back(std::min(nominal[s], output_stride));
  }

  if (id == "toy") {
    const int widths[5] = {8, 16, 24, 32, 48};
    int cin = in_channels;
    for (int s = 0; s < 5; ++s) {
      Stage st;
      ConvSpec cs{.stride = stride_in[s], .pad = dil[s], .dilation = dil[s],
                  .groups = 1};
      st.convs.emplace_back(cin, widths[s], 3, cs, rng);
      cin = widths[s];
      stage_channels_.push_back(cin);
      stages_.push_back(std::move(st));
    }
    return;
  }

  // resnet50-like / seresnext50-like. Width divided by 4 keeps it
  // CPU-trainable; the block counts and stride plan are the contract.
  const bool with_se = id == "seresnext50-like";
  const int groups = with_se ? 8 : 1;
  const int base = 16;  // stem width (64/4)
  const int block_counts[4] = {3, 4, 6, 3};

  // Stage 0: 7x7/2 stem.
  {
    Stage st;
    ConvSpec cs{.stride = 2, .pad = 3, .dilation = 1, .groups = 1};
    st.convs.emplace_back(in_channels, base, 7, cs, rng);
    stage_channels_.push_back(base);
    stages_.push_back(std::move(st));
  }
  int cin = base;
  for (int s = 0; s < 4; ++s) {
    Stage st;
    st.pool_before = s == 0;  // the /4 comes from the stem pool
    const int width = base * (1 << s);
    const int out_ch = width * 4;
    const int first_stride = s == 0 ? 1 : stride_in[s + 1];
    const int d = dil[s + 1];
    for (int b = 0; b < block_counts[s]; ++b) {
      st.blocks.emplace_back(cin, width, out_ch, b == 0 ? first_stride : 1, d,
                             groups, with_se, rng);
      cin = out_ch;
    }
    stage_channels_.push_back(cin);
    stages_.push_back(std::move(st));
  }
}

std::vector<Var> FiveStageBackbone::forward(const Var& x, bool training) {
  std::vector<Var> outs;
  Var cur = x;
  for (auto& st : stages_) {
    if (st.pool_before) cur = nn::max_pool2d(cur, 3, 2, 1);
    for (auto& c : st.convs) cur = c.forward(cur, training);
    for (auto& b : st.blocks) cur = b.forward(cur, training);
    outs.push_back(cur);
  }
  return outs;
}

void FiveStageBackbone::collect(nn::ParamMap& m, const std::string& prefix) {
  for (size_t s = 0; s < stages_.size(); ++s) {
    auto& st = stages_[s];
    const std::string sp = prefix + ".stage" + std::to_string(s);
    for (size_t i = 0; i < st.convs.size(); ++i)
      st.convs[i].collect(m, sp + ".conv" + std::to_string(i));
    for (size_t i = 0; i < st.blocks.size(); ++i)
      st.blocks[i].collect(m, sp + ".block" + std::to_string(i));
  }
}

}  // namespace wsseg::backbones
