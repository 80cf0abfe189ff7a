#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsseg/nn/layers.hpp"

namespace wsseg::nn {

// Hand-off unit between pipeline stages: weights + config fingerprint.
// Serialized as one binary blob plus a small JSON sidecar next to it.
struct StageCheckpoint {
  std::string stage;  // classifier | irnet | segmenter
  uint64_t fingerprint = 0;
  int epoch = 0;
  double best_metric = 0.0;
  std::vector<std::pair<std::string, Tensor>> entries;  // params then buffers
};

StageCheckpoint snapshot(const std::string& stage, const ParamMap& params,
                         uint64_t fingerprint, int epoch, double best_metric);

// Copies checkpoint tensors back into a live model's parameter map.
// Throws CheckpointError if names or shapes disagree.
void restore(const StageCheckpoint& ckpt, ParamMap& params);

void save_checkpoint(const std::string& path, const StageCheckpoint& ckpt);

// expected_fingerprint != 0 enforces the fingerprint match at load time.
StageCheckpoint load_checkpoint(const std::string& path,
                                uint64_t expected_fingerprint = 0);

}  // namespace wsseg::nn
