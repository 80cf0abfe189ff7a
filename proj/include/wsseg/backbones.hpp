#pragma once

#include <string>
#include <vector>

#include "wsseg/nn/layers.hpp"

namespace wsseg::backbones {

// Five-level convolutional feature ladder shared by the IRNet branches and
// the segmentation encoders. Stage strides follow the canonical layout
// (/2, /4, /8, /16, /32); when output_stride < 32 the deeper stages swap
// stride for dilation.
//
//   "toy"             : light ladder for CPU-scale runs
//   "resnet50-like"   : bottleneck stages [3,4,6,3]
//   "seresnext50-like": grouped bottlenecks with squeeze-excitation
class FiveStageBackbone {
 public:
  FiveStageBackbone() = default;
  FiveStageBackbone(const std::string& id, int in_channels, int output_stride,
                    uint64_t seed);

  // Returns the five stage outputs, shallowest first.
  std::vector<nn::Var> forward(const nn::Var& x, bool training);

  const std::vector<int>& stage_channels() const { return stage_channels_; }
  const std::vector<int>& stage_strides() const { return stage_strides_; }
  void collect(nn::ParamMap& m, const std::string& prefix);

 private:
  struct Stage {
    std::vector<nn::ConvBnRelu> convs;
    std::vector<nn::Bottleneck> blocks;
    bool pool_before = false;  // k3 s2 p1 max pool entering the stage
  };
  std::vector<Stage> stages_;
  std::vector<int> stage_channels_;
  std::vector<int> stage_strides_;
};

bool is_known_backbone(const std::string& id);

}  // namespace wsseg::backbones
