#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace eradiff {

/// C x H x W image, row-major planes, float64 in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(Eigen::ArrayXd::Constant(Eigen::Index(c) * h * w, fill)) {}

  Eigen::Index index(int c, int y, int x) const { return (Eigen::Index(c) * height + y) * width + x; }
  double& at(int c, int y, int x) { return data(index(c, y, x)); }
  double at(int c, int y, int x) const { return data(index(c, y, x)); }
  Eigen::Index pixels() const { return Eigen::Index(height) * width; }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

using MaskBits = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// Binary H x W mask; 1 marks the hole (erase region), 0 the visible background.
struct Mask {
  int height = 0;
  int width = 0;
  MaskBits bits;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(MaskBits::Constant(Eigen::Index(h) * w, fill)) {}

  std::uint8_t& at(int y, int x) { return bits(Eigen::Index(y) * width + x); }
  std::uint8_t at(int y, int x) const { return bits(Eigen::Index(y) * width + x); }
  Eigen::Index area() const { return bits.cast<Eigen::Index>().sum(); }
  double fraction() const { return static_cast<double>(area()) / static_cast<double>(bits.size()); }
  bool empty() const { return area() == 0; }
  bool full() const { return area() == bits.size(); }
  bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }

  /// Mask as 0/1 doubles, H*W entries.
  Eigen::ArrayXd as_array() const { return bits.cast<double>(); }
  /// Mask broadcast across `channels` planes (matches Image::data layout).
  Eigen::ArrayXd broadcast(int channels) const {
    Eigen::ArrayXd out(Eigen::Index(channels) * bits.size());
    for (int c = 0; c < channels; ++c) out.segment(Eigen::Index(c) * bits.size(), bits.size()) = as_array();
    return out;
  }
};

inline Mask mask_union(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_union: shapes differ");
  Mask out(a.height, a.width);
  out.bits = (a.bits != 0 || b.bits != 0).cast<std::uint8_t>();
  return out;
}

inline Eigen::Index mask_overlap(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_overlap: shapes differ");
  return (a.bits != 0 && b.bits != 0).cast<Eigen::Index>().sum();
}

/// Number of 4-connected components of the set pixels.
int connected_components(const Mask& m);

}  // namespace eradiff
