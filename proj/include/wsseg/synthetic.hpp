#pragma once

#include <cstdint>
#include <string>

namespace wsseg::synth {

// Two-class "blobs" dataset: bright squares (class 0) and mid-gray disks
// (class 1) on a noisy dark background, with pixel-exact palette masks.
// Ships in-repo so end-to-end runs need no downloads. A slice of the images
// carries two same-class blobs, the multi-instance case map extraction
// methods disagree on.
struct SyntheticConfig {
  int train_count = 500;
  int val_count = 100;
  int test_count = 0;
  int image_size = 64;
  float noise_std = 0.03f;
  float background = 0.12f;
  uint64_t seed = 7;
};

// Writes images/, masks/ and manifest.csv under `dir`; returns the manifest
// path. Deterministic for a fixed config.
std::string generate_blobs_dataset(const std::string& dir,
                                   const SyntheticConfig& cfg);

inline const char* kBlobClassNames[2] = {"square", "disk"};

}  // namespace wsseg::synth
