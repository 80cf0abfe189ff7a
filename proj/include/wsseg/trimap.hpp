#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsseg/errors.hpp"

namespace wsseg {

// Per-pixel label grid. Label 0 is background, foreground class c (0-based)
// is stored as c+1, 255 marks ignore. Matches the palette-PNG layout used on
// disk, so persisted trimaps round-trip without remapping.
struct Trimap {
  static constexpr uint8_t kBackground = 0;
  static constexpr uint8_t kIgnore = 255;

  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;

  Trimap() = default;
  Trimap(int h, int w, uint8_t fill = kBackground)
      : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
  size_t pixel_count() const { return labels.size(); }

  static uint8_t class_value(int class_id) { return static_cast<uint8_t>(class_id + 1); }
};

void save_trimap(const std::string& path, const Trimap& t);
Trimap load_trimap(const std::string& path);

}  // namespace wsseg
