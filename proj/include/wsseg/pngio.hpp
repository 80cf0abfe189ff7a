#pragma once

#include <array>
#include <string>
#include <vector>

#include "wsseg/image.hpp"

namespace wsseg::pngio {

// Reads an 8-bit PNG as gray (1 channel) or RGB (3 channels). Palette images
// are expanded to RGB; 16-bit depth is reduced to 8.
ImageU8 read_image(const std::string& path);

// Reads a palette (or gray) PNG keeping raw indices as label values.
// This is the loader for trimaps / evaluation masks where the index itself
// is the label (ignore = 255).
ImageU8 read_labels(const std::string& path);

void write_gray(const std::string& path, const ImageU8& img);
void write_rgb(const std::string& path, const ImageU8& img);

// Writes `labels` (1 channel, values are palette indices) as an indexed PNG
// using the PASCAL VOC color table; index 255 renders as the ignore color.
void write_labels(const std::string& path, const ImageU8& labels);

// PASCAL VOC bit-reversal palette, 256 RGB entries.
std::array<std::array<uint8_t, 3>, 256> pascal_palette();

}  // namespace wsseg::pngio
