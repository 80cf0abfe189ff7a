#include "wsseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace wsseg {

ImageF to_float(const ImageU8& img) {
  ImageF out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return out;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return out;
}

}  // namespace wsseg
