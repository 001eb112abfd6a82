#include "eradiff/model.hpp"

#include <limits>

namespace eradiff {

void validate(const DenoiserConfig& c) {
  if (c.image_channels < 1) throw std::invalid_argument("model: image_channels must be >= 1");
  if (c.widths.size() < 2) throw std::invalid_argument("model: depth must be >= 1 (need at least two widths)");
  for (int w : c.widths)
    if (w < 1) throw std::invalid_argument("model: widths must be positive");
  if (c.attention_dim < 1 || c.time_dim < 2 || c.time_dim % 2 != 0)
    throw std::invalid_argument("model: attention_dim must be >= 1 and time_dim even and >= 2");
  const int factor = 1 << c.depth();
  if (c.image_size % factor != 0 || c.image_size / factor != c.attention_resolution)
    throw std::invalid_argument("model: attention resolution " + std::to_string(c.attention_resolution) +
                                " is not reachable from image size " + std::to_string(c.image_size) +
                                " with depth " + std::to_string(c.depth()));
}

ExtendedMask extended_mask_from_tokens(const MaskBits& m) {
  ExtendedMask e;
  e.tokens = static_cast<int>(m.size());
  e.m = m;
  if (e.tokens > 0 && (m != 0).all())
    throw std::domain_error("extended_mask: every token is a hole (degenerate full-image mask)");
  e.m_prime.resize(e.tokens, e.tokens);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < e.tokens; ++i)
    for (int j = 0; j < e.tokens; ++j) e.m_prime(i, j) = (m(i) == 0 || m(j) == 0) ? 1.0 : neg_inf;
  return e;
}

ExtendedMask extended_mask(const Mask& mask, int h, int w) {
  if (h < 1 || w < 1 || mask.height % h != 0 || mask.width % w != 0)
    throw std::invalid_argument("extended_mask: token grid " + std::to_string(h) + "x" + std::to_string(w) +
                                " does not divide mask " + std::to_string(mask.height) + "x" +
                                std::to_string(mask.width));
  const int bh = mask.height / h, bw = mask.width / w;
  MaskBits m = MaskBits::Zero(Eigen::Index(h) * w);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) m(Eigen::Index(y / bh) * w + x / bw) = 1;
  return extended_mask_from_tokens(m);
}

}  // namespace eradiff
