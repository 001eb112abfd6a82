#include "eradiff/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace eradiff {

namespace {

struct File {
  std::FILE* f;
  ~File() {
    if (f) std::fclose(f);
  }
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

void write_rows(const std::string& path, int width, int height, int color_type,
                const std::vector<std::uint8_t>& pixels, int per_pixel) {
  File file{std::fopen(path.c_str(), "wb")};
  if (!file.f) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error writing " + path);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + std::size_t(y) * width * per_pixel));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_png: only 1- or 3-channel images are supported");
  std::vector<std::uint8_t> px(std::size_t(image.pixels()) * image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        px[(std::size_t(y) * image.width + x) * image.channels + c] = quantize(image.at(c, y, x));
  write_rows(path, image.width, image.height, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, px,
             image.channels);
}

void write_png(const std::string& path, const Mask& mask) {
  std::vector<std::uint8_t> px(mask.bits.size());
  for (Eigen::Index i = 0; i < mask.bits.size(); ++i) px[i] = mask.bits(i) ? 255 : 0;
  write_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, px, 1);
}

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error("cannot read PNG " + path + ": " + img.message);
  const bool grey = !(img.format & PNG_FORMAT_FLAG_COLOR);
  img.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = grey ? 1 : 3;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path + ": " + img.message);
  }
  Image out(channels, static_cast<int>(img.height), static_cast<int>(img.width));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = px[(std::size_t(y) * out.width + x) * channels + c] / 255.0;
  return out;
}

Mask read_mask_png(const std::string& path) {
  const Image img = read_png(path);
  Mask m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v = 0.0;
      for (int c = 0; c < img.channels; ++c) v = std::max(v, img.at(c, y, x));
      m.at(y, x) = v > 0.0 ? 1 : 0;
    }
  return m;
}

Image mask_image(const Mask& mask, int channels) {
  Image out(channels, mask.height, mask.width);
  out.data = mask.broadcast(channels);
  return out;
}

Image hstack(const std::vector<Image>& tiles) {
  if (tiles.empty()) throw std::invalid_argument("hstack: no tiles");
  const int c = tiles[0].channels, h = tiles[0].height;
  int w = -1;
  for (const auto& t : tiles) {
    if (t.channels != c || t.height != h) throw std::invalid_argument("hstack: tiles differ in channels/height");
    w += t.width + 1;
  }
  Image out(c, h, w, 1.0);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < t.width; ++x) out.at(ch, y, x0 + x) = t.at(ch, y, x);
    x0 += t.width + 1;
  }
  return out;
}

}  // namespace eradiff
