#include <algorithm>
#include <cmath>

#include "wsseg/dataset.hpp"

namespace wsseg::data {

void AugmentationConfig::validate() const {
  auto prob_ok = [](float p) { return p >= 0.0f && p <= 1.0f; };
  if (!prob_ok(blur_prob) || !prob_ok(hflip_prob))
    throw ConfigError("augmentation probabilities must be in [0,1]");
  if (scale_min <= 0.0f || scale_max < scale_min)
    throw ConfigError("scale_range must be positive and ordered");
  if (rotation_limit < 0.0f) throw ConfigError("rotation_limit must be >= 0");
  if (output_size < 1) throw ConfigError("output_size must be >= 1");
}

namespace {

inline float sample_bilinear_clamped(const ImageF& img, int c, float y, float x) {
  const int h = img.height, w = img.width;
  float xc = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  float yc = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  int x0 = static_cast<int>(std::floor(xc));
  int y0 = static_cast<int>(std::floor(yc));
  int x1 = std::min(x0 + 1, w - 1);
  int y1 = std::min(y0 + 1, h - 1);
  float fx = xc - static_cast<float>(x0);
  float fy = yc - static_cast<float>(y0);
  float top = img.at(c, y0, x0) * (1.0f - fx) + img.at(c, y0, x1) * fx;
  float bot = img.at(c, y1, x0) * (1.0f - fx) + img.at(c, y1, x1) * fx;
  return top * (1.0f - fy) + bot * fy;
}

struct InverseWarp {
  // Maps output pixel centers to source coordinates:
  // flip, then inverse rotation/scale, then the resize ratio.
  float cos_t, sin_t, inv_scale;
  bool flip;
  float out_c, src_cx, src_cy, rx, ry;

  void map(float xo, float yo, float& xs, float& ys) const {
    float uo = xo - out_c;
    float vo = yo - out_c;
    if (flip) uo = -uo;
    float u = (cos_t * uo + sin_t * vo) * inv_scale;
    float v = (-sin_t * uo + cos_t * vo) * inv_scale;
    xs = u * rx + src_cx;
    ys = v * ry + src_cy;
  }
};

InverseWarp make_warp(int src_h, int src_w, int out_size, float scale,
                      float angle_deg, bool flip) {
  InverseWarp wp;
  const float theta = angle_deg * 3.14159265358979323846f / 180.0f;
  wp.cos_t = std::cos(theta);
  wp.sin_t = std::sin(theta);
  wp.inv_scale = 1.0f / scale;
  wp.flip = flip;
  wp.out_c = 0.5f * static_cast<float>(out_size) - 0.5f;
  wp.src_cx = 0.5f * static_cast<float>(src_w) - 0.5f;
  wp.src_cy = 0.5f * static_cast<float>(src_h) - 0.5f;
  wp.rx = static_cast<float>(src_w) / static_cast<float>(out_size);
  wp.ry = static_cast<float>(src_h) / static_cast<float>(out_size);
  return wp;
}

void blur3(ImageF& img) {
  // Separable 3-tap gaussian (sigma ~0.8).
  static const float k[3] = {0.25f, 0.5f, 0.25f};
  ImageF tmp = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int t = -1; t <= 1; ++t) {
          int xs = std::clamp(x + t, 0, img.width - 1);
          acc += k[t + 1] * img.at(c, y, xs);
        }
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int t = -1; t <= 1; ++t) {
          int ys = std::clamp(y + t, 0, img.height - 1);
          acc += k[t + 1] * tmp.at(c, ys, x);
        }
        img.at(c, y, x) = acc;
      }
  }
}

}  // namespace

AugmentedSample augment(const ImageF& image, const std::optional<Trimap>& mask,
                        const AugmentationConfig& cfg, Rng& draw) {
  if (image.height < 1 || image.width < 1) throw DataError("empty image");
  cfg.validate();
  if (mask && (mask->height != image.height || mask->width != image.width))
    throw ShapeError("augment: mask dimensions differ from image");

  // Fixed draw order so a seed replays exactly.
  const float scale =
      static_cast<float>(draw.uniform(cfg.scale_min, cfg.scale_max));
  const float angle = cfg.rotation_limit > 0.0f
                          ? static_cast<float>(
                                draw.uniform(-cfg.rotation_limit, cfg.rotation_limit))
                          : 0.0f;
  const bool flip = cfg.hflip_prob > 0.0f && draw.bernoulli(cfg.hflip_prob);
  const bool do_blur = cfg.blur_prob > 0.0f && draw.bernoulli(cfg.blur_prob);
  const float brightness =
      cfg.brightness_limit > 0.0f
          ? static_cast<float>(
                draw.uniform(-cfg.brightness_limit, cfg.brightness_limit))
          : 0.0f;

  const int S = cfg.output_size;
  const InverseWarp warp = make_warp(image.height, image.width, S, scale, angle, flip);

  AugmentedSample out;
  out.image = ImageF(S, S, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float xs, ys;
        warp.map(static_cast<float>(x), static_cast<float>(y), xs, ys);
        out.image.at(c, y, x) = sample_bilinear_clamped(image, c, ys, xs);
      }

  if (mask) {
    Trimap m(S, S, Trimap::kIgnore);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float xs, ys;
        warp.map(static_cast<float>(x), static_cast<float>(y), xs, ys);
        int xn = static_cast<int>(std::lround(xs));
        int yn = static_cast<int>(std::lround(ys));
        if (xn >= 0 && xn < mask->width && yn >= 0 && yn < mask->height)
          m.at(y, x) = mask->at(yn, xn);
        // else: outside the source canvas, stays ignore
      }
    out.mask = std::move(m);
  }

  if (do_blur) blur3(out.image);
  if (brightness != 0.0f) {
    for (float& v : out.image.data)
      v = std::clamp(v * (1.0f + brightness), 0.0f, 1.0f);
  }
  return out;
}

ImageF resize_bilinear(const ImageF& img, int out_h, int out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  ImageF out(out_h, out_w, img.channels);
  const float ry = static_cast<float>(img.height) / static_cast<float>(out_h);
  const float rx = static_cast<float>(img.width) / static_cast<float>(out_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out_h; ++y) {
      const float ys = (static_cast<float>(y) + 0.5f) * ry - 0.5f;
      for (int x = 0; x < out_w; ++x) {
        const float xs = (static_cast<float>(x) + 0.5f) * rx - 0.5f;
        out.at(c, y, x) = sample_bilinear_clamped(img, c, ys, xs);
      }
    }
  return out;
}

Trimap resize_nearest(const Trimap& t, int out_h, int out_w) {
  if (t.height == out_h && t.width == out_w) return t;
  Trimap out(out_h, out_w);
  const float ry = static_cast<float>(t.height) / static_cast<float>(out_h);
  const float rx = static_cast<float>(t.width) / static_cast<float>(out_w);
  for (int y = 0; y < out_h; ++y) {
    int ys = std::clamp(static_cast<int>((static_cast<float>(y) + 0.5f) * ry), 0,
                        t.height - 1);
    for (int x = 0; x < out_w; ++x) {
      int xs = std::clamp(static_cast<int>((static_cast<float>(x) + 0.5f) * rx), 0,
                          t.width - 1);
      out.at(y, x) = t.at(ys, xs);
    }
  }
  return out;
}

}  // namespace wsseg::data
