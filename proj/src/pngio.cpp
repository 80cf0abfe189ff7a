#include "wsseg/pngio.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

namespace wsseg::pngio {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

void begin_read(PngReader& r, FILE* f, const std::string& path) {
  png_byte header[8];
  if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("not a PNG file: " + path);
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  r.info = png_create_info_struct(r.png);
  if (!r.png || !r.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng read error: " + path);
  png_init_io(r.png, f);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);
}

ImageU8 read_rows(PngReader& r, int channels) {
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  ImageU8 img(h, w, channels);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = img.data.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  begin_read(r, f.get(), path);

  png_byte color = png_get_color_type(r.png, r.info);
  png_byte depth = png_get_bit_depth(r.png, r.info);

  if (depth == 16) png_set_strip_16(r.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  const int channels = static_cast<int>(png_get_channels(r.png, r.info));
  if (channels != 1 && channels != 3)
    throw IoError("unsupported channel count in " + path);
  return read_rows(r, channels);
}

ImageU8 read_labels(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  begin_read(r, f.get(), path);

  png_byte color = png_get_color_type(r.png, r.info);
  png_byte depth = png_get_bit_depth(r.png, r.info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY)
    throw IoError("label PNG must be palette or gray: " + path);
  if (depth == 16) png_set_strip_16(r.png);
  if (depth < 8) png_set_packing(r.png);  // one index per byte
  png_read_update_info(r.png, r.info);
  return read_rows(r, 1);
}

namespace {

void write_common(const std::string& path, const ImageU8& img, int color_type,
                  const std::array<std::array<uint8_t, 3>, 256>* palette) {
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  w.info = png_create_info_struct(w.png);
  if (!w.png || !w.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError("libpng write error: " + path);
  png_init_io(w.png, f.get());
  // Fixed compression settings keep output bytes reproducible.
  png_set_compression_level(w.png, 6);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal;
  if (palette) {
    pal.resize(256);
    for (int i = 0; i < 256; ++i)
      pal[static_cast<size_t>(i)] = {(*palette)[static_cast<size_t>(i)][0],
                                     (*palette)[static_cast<size_t>(i)][1],
                                     (*palette)[static_cast<size_t>(i)][2]};
    png_set_PLTE(w.png, w.info, pal.data(), 256);
  }
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
        img.data.data() + static_cast<size_t>(y) * img.width * img.channels);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

}  // namespace

void write_gray(const std::string& path, const ImageU8& img) {
  if (img.channels != 1) throw IoError("write_gray expects 1 channel");
  write_common(path, img, PNG_COLOR_TYPE_GRAY, nullptr);
}

void write_rgb(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw IoError("write_rgb expects 3 channels");
  write_common(path, img, PNG_COLOR_TYPE_RGB, nullptr);
}

void write_labels(const std::string& path, const ImageU8& labels) {
  if (labels.channels != 1) throw IoError("write_labels expects 1 channel");
  auto palette = pascal_palette();
  write_common(path, labels, PNG_COLOR_TYPE_PALETTE, &palette);
}

std::array<std::array<uint8_t, 3>, 256> pascal_palette() {
  // Standard VOC colormap: bit-reversal construction, entry 255 overridden
  // with the conventional ignore color.
  std::array<std::array<uint8_t, 3>, 256> pal{};
  for (int i = 0; i < 256; ++i) {
    int id = i;
    uint8_t r = 0, g = 0, b = 0;
    for (int j = 0; j < 8; ++j) {
      r = static_cast<uint8_t>(r | ((id >> 0 & 1) << (7 - j)));
      g = static_cast<uint8_t>(g | ((id >> 1 & 1) << (7 - j)));
      b = static_cast<uint8_t>(b | ((id >> 2 & 1) << (7 - j)));
      id >>= 3;
    }
    pal[static_cast<size_t>(i)] = {r, g, b};
  }
  pal[255] = {224, 224, 192};
  return pal;
}

}  // namespace wsseg::pngio
