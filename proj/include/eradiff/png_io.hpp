#pragma once

#include "eradiff/image.hpp"

#include <string>
#include <vector>

namespace eradiff {

/// 8-bit PNG I/O. Values are clamped to [0, 1] and rounded to the nearest level.
/// One-channel images are written as grey, three-channel as RGB.
void write_png(const std::string& path, const Image& image);
void write_png(const std::string& path, const Mask& mask);
Image read_png(const std::string& path);
/// Any non-zero grey level is read as a hole.
Mask read_mask_png(const std::string& path);

/// Images placed left to right with a one-pixel white gutter; masks become grey images.
Image hstack(const std::vector<Image>& tiles);
Image mask_image(const Mask& mask, int channels);

}  // namespace eradiff
