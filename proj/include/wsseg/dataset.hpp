#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsseg/errors.hpp"
#include "wsseg/image.hpp"
#include "wsseg/rng.hpp"
#include "wsseg/trimap.hpp"

namespace wsseg::data {

// ---------------------------------------------------------------------------
// Binary masks and the competition-style RLE codec
// ---------------------------------------------------------------------------

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;  // row-major, values {0,1}

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

// RLE strings are "-1" for the empty mask, else whitespace-separated
// (start, run-length) pairs with 0-based starts over column-major pixel
// order. `row_major = true` switches the pixel ordering for datasets that
// use it; the default mirrors the competition format.
BinaryMask decode_rle(const std::string& rle, int height, int width,
                      bool row_major = false);
std::string encode_rle(const BinaryMask& mask, bool row_major = false);

// ---------------------------------------------------------------------------
// Dataset index
// ---------------------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };

Split parse_split(const std::string& s);
const char* split_name(Split s);

struct SampleRecord {
  std::string id;
  std::string image_path;
  std::vector<uint8_t> labels;      // length k, image-level class presence
  std::optional<std::string> mask_rle;   // inline RLE (binary datasets)
  std::optional<std::string> mask_path;  // palette PNG (multi-class datasets)
  Split split = Split::kTrain;

  bool positive() const {
    for (uint8_t l : labels)
      if (l) return true;
    return false;
  }
};

struct SplitCounts {
  int positives = 0;
  int negatives = 0;
};

struct DatasetIndex {
  std::vector<SampleRecord> records;
  std::vector<std::string> class_names;
  SplitCounts counts[3];  // indexed by Split

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<int> split_indices(Split s) const;
  const SplitCounts& split_counts(Split s) const {
    return counts[static_cast<int>(s)];
  }
};

// Loads the manifest CSV (`id,image_path,labels,mask_rle,split`). `labels`
// is a ';'-separated class-name list (empty = all-negative). The mask field
// may hold an inline RLE string or a path to a palette PNG (detected by a
// ".png" suffix).
DatasetIndex load_index(const std::string& manifest_path,
                        const std::vector<std::string>& class_names);

// ---------------------------------------------------------------------------
// Class-balanced batch stream
// ---------------------------------------------------------------------------

// Emits one epoch of batches over `split`; every batch carries exactly
// round(batch_size * positive_fraction) positive records. Whichever class
// runs out inside the epoch is re-sampled with replacement. Deterministic
// under a fixed seed.
class BalancedBatchStream {
 public:
  BalancedBatchStream(const DatasetIndex& index, Split split, int batch_size,
                      double positive_fraction, uint64_t seed);

  // Returns record indices into index.records; empty when the epoch ends.
  std::vector<int> next_batch();
  void start_epoch(int epoch);
  int batches_per_epoch() const { return batches_per_epoch_; }

 private:
  const DatasetIndex& index_;
  std::vector<int> positives_, negatives_;
  int batch_size_;
  int pos_per_batch_;
  int batches_per_epoch_;
  int cursor_ = 0;
  uint64_t seed_;
  int epoch_ = 0;
  std::vector<int> pos_order_, neg_order_;
  size_t pos_used_ = 0, neg_used_ = 0;
  Rng draw_;

  std::vector<int> take(std::vector<int>& order, size_t& used,
                        const std::vector<int>& pool, int n);
};

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationConfig {
  float scale_min = 1.0f;
  float scale_max = 1.0f;
  float rotation_limit = 0.0f;   // degrees
  float blur_prob = 0.0f;
  float brightness_limit = 0.0f; // relative delta
  float hflip_prob = 0.0f;
  int output_size = 64;          // network input size (square)

  void validate() const;
};

struct AugmentedSample {
  ImageF image;
  std::optional<Trimap> mask;
};

// Applies one random scale/rotation/flip draw as a single affine warp
// (bilinear for the image, nearest for the mask so labels stay exact),
// then photometric jitter on the image alone. Pixels mapped from outside
// the source become edge-clamped in the image and ignore in the mask.
AugmentedSample augment(const ImageF& image, const std::optional<Trimap>& mask,
                        const AugmentationConfig& cfg, Rng& draw);

// Deterministic resize used by the non-augmented (eval) path.
ImageF resize_bilinear(const ImageF& img, int out_h, int out_w);
Trimap resize_nearest(const Trimap& t, int out_h, int out_w);

}  // namespace wsseg::data
