#pragma once

#include <cstdint>
#include <vector>

#include "wsseg/errors.hpp"

namespace wsseg {

// 8-bit image, row-major, `channels` interleaved (1 = gray, 3 = RGB).
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, int c, uint8_t fill = 0)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

// Float image in [0,1], planar single channel per plane.
struct ImageF {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> data;  // plane-major: c * H*W + y*W + x

  ImageF() = default;
  ImageF(int h, int w, int c, float fill = 0.f)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

ImageF to_float(const ImageU8& img);
ImageU8 to_u8(const ImageF& img);

}  // namespace wsseg
