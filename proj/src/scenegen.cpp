#include "eradiff/scenegen.hpp"

#include "eradiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace eradiff {

namespace {

constexpr double kPi = std::numbers::pi;

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

/// Saturated colour from a hue in [0, 6) with piecewise-linear HSV.
std::array<double, 3> hue_color(double hue, double sat, double val) {
  const double c = val * sat;
  const double x = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
  const double m = val - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& v : rgb) v += m;
  return rgb;
}

double channel_of(const std::array<double, 3>& rgb, int c) { return rgb[static_cast<std::size_t>(c % 3)]; }

Image make_background(std::uint64_t seed, const SceneConfig& cfg) {
  Rng rng(derive_seed(seed, {2}));
  const int n = cfg.size;
  std::array<double, 3> ca{}, cb{};
  const double ga = rng.uniform(0.3, 0.7), gb = rng.uniform(0.3, 0.7);
  for (int c = 0; c < 3; ++c) {
    ca[c] = ga + rng.uniform(-0.08, 0.08);
    cb[c] = gb + rng.uniform(-0.08, 0.08);
  }
  double dy = 0, dx = 0, len = 0;
  while (len < 1e-3) {
    dy = rng.uniform(-1.0, 1.0);
    dx = rng.uniform(-1.0, 1.0);
    len = std::sqrt(dy * dy + dx * dx);
  }
  dy /= len;
  dx /= len;

  constexpr int kGrid = 5;
  Eigen::ArrayXXd noise(kGrid * cfg.channels, kGrid);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = 0.04 * rng.normal();

  Image bg(cfg.channels, n, n);
  const double half = 0.5 * (n - 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double t = clamp01(0.5 + ((y - half) * dy + (x - half) * dx) / n);
      const double gy = static_cast<double>(y) * (kGrid - 1) / (n - 1);
      const double gx = static_cast<double>(x) * (kGrid - 1) / (n - 1);
      const int iy = std::min(static_cast<int>(gy), kGrid - 2), ix = std::min(static_cast<int>(gx), kGrid - 2);
      const double fy = gy - iy, fx = gx - ix;
      for (int c = 0; c < cfg.channels; ++c) {
        const int r = c * kGrid;
        const double lf = (1 - fy) * ((1 - fx) * noise(r + iy, ix) + fx * noise(r + iy, ix + 1)) +
                          fy * ((1 - fx) * noise(r + iy + 1, ix) + fx * noise(r + iy + 1, ix + 1));
        bg.at(c, y, x) = clamp01((1 - t) * channel_of(ca, c) + t * channel_of(cb, c) + lf);
      }
    }
  return bg;
}

bool point_in_polygon(double py, double px, const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [yi, xi] = poly[i];
    const auto [yj, xj] = poly[j];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

struct Bounds {
  int ymin, ymax, xmin, xmax;  // offsets relative to the sprite centre
};

Bounds footprint_bounds(const ObjectSprite& s) {
  Bounds b{s.canvas(), -s.canvas(), s.canvas(), -s.canvas()};
  for (int y = 0; y < s.canvas(); ++y)
    for (int x = 0; x < s.canvas(); ++x)
      if (s.footprint.at(y, x)) {
        b.ymin = std::min(b.ymin, y - s.center());
        b.ymax = std::max(b.ymax, y - s.center());
        b.xmin = std::min(b.xmin, x - s.center());
        b.xmax = std::max(b.xmax, x - s.center());
      }
  return b;
}

/// Writes the sprite centred at (cy, cx); returns its footprint in image coordinates.
Mask composite(Image& img, const ObjectSprite& s, int cy, int cx) {
  Mask placed(img.height, img.width);
  for (int y = 0; y < s.canvas(); ++y)
    for (int x = 0; x < s.canvas(); ++x) {
      if (!s.footprint.at(y, x)) continue;
      const int iy = cy + y - s.center(), ix = cx + x - s.center();
      if (iy < 0 || iy >= img.height || ix < 0 || ix >= img.width)
        throw std::logic_error("composite: sprite leaves the image");
      placed.at(iy, ix) = 1;
      for (int c = 0; c < img.channels; ++c) img.at(c, iy, ix) = s.texture.at(c, y, x);
    }
  return placed;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::polygon: return "polygon";
    case ShapeKind::blob: return "blob";
  }
  return "?";
}

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::rectangle: return "rectangle";
    case MaskKind::ellipse: return "ellipse";
    case MaskKind::irregular: return "irregular";
    case MaskKind::combined: return "combined";
  }
  return "?";
}

MaskKind parse_mask_kind(const std::string& name) {
  if (name == "rectangle") return MaskKind::rectangle;
  if (name == "ellipse") return MaskKind::ellipse;
  if (name == "irregular") return MaskKind::irregular;
  if (name == "combined") return MaskKind::combined;
  throw std::invalid_argument("unknown mask kind '" + name + "'");
}

int connected_components(const Mask& m) {
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(m.bits.size()), 0);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < m.bits.size(); ++start) {
    if (!m.bits(start) || seen[start]) continue;
    ++count;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / m.width, x = p % m.width;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= m.height || q[1] < 0 || q[1] >= m.width) continue;
        const int idx = q[0] * m.width + q[1];
        if (m.bits(idx) && !seen[idx]) {
          seen[idx] = 1;
          stack.push_back(idx);
        }
      }
    }
  }
  return count;
}

void validate(const SceneConfig& c) {
  if (c.size < 16) throw std::invalid_argument("scene: image size must be >= 16");
  if (c.channels < 1) throw std::invalid_argument("scene: channels must be >= 1");
  if (!(0.0 < c.area_min && c.area_min < c.area_max && c.area_max < 1.0))
    throw std::invalid_argument("scene: need 0 < area_min < area_max < 1");
  if (!(0.0 < c.scale_min && c.scale_min <= c.scale_max))
    throw std::invalid_argument("scene: need 0 < scale_min <= scale_max");
  if (!(1.0 <= c.radius_min && c.radius_min <= c.radius_max))
    throw std::invalid_argument("scene: need 1 <= radius_min <= radius_max");
  if (2 * static_cast<int>(std::ceil(c.radius_max * c.scale_max * std::numbers::sqrt2)) + 3 > c.size)
    throw std::invalid_argument("scene: transformed objects cannot fit in the image");
}

ObjectSprite make_source_object(std::uint64_t seed, const SceneConfig& cfg) {
  Rng rng(derive_seed(seed, {1}));
  const int canvas = 2 * static_cast<int>(std::ceil(cfg.radius_max)) + 3;
  const int c0 = canvas / 2;
  ObjectSprite s;
  s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  s.footprint = Mask(canvas, canvas);
  s.texture = Image(cfg.channels, canvas, canvas);
  const double r = rng.uniform(cfg.radius_min, cfg.radius_max);

  if (s.kind == ShapeKind::disc) {
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x)
        s.footprint.at(y, x) = (y - c0) * (y - c0) + (x - c0) * (x - c0) <= r * r;
  } else if (s.kind == ShapeKind::polygon) {
    const int k = static_cast<int>(rng.uniform_int(5, 8));
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    std::vector<std::pair<double, double>> poly;
    for (int i = 0; i < k; ++i) {
      const double a = phase + 2.0 * kPi * (i + rng.uniform(-0.25, 0.25)) / k;
      const double rr = std::min(r * rng.uniform(0.9, 1.1), c0 - 0.5);
      poly.emplace_back(rr * std::sin(a), rr * std::cos(a));
    }
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x) s.footprint.at(y, x) = point_in_polygon(y - c0, x - c0, poly);
  } else {
    std::vector<std::array<double, 3>> lobes{{0.0, 0.0, 0.65 * r}};
    const int n = static_cast<int>(rng.uniform_int(3, 4));
    for (int i = 0; i < n; ++i) {
      const double a = rng.uniform(0.0, 2.0 * kPi);
      const double d = rng.uniform(0.3, 0.45) * r;
      lobes.push_back({d * std::sin(a), d * std::cos(a), rng.uniform(0.45, 0.55) * r});
    }
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x)
        for (const auto& l : lobes) {
          const double ddy = y - c0 - l[0], ddx = x - c0 - l[1];
          if (ddy * ddy + ddx * ddx <= l[2] * l[2]) {
            s.footprint.at(y, x) = 1;
            break;
          }
        }
  }

  const auto base = hue_color(rng.uniform(0.0, 6.0), rng.uniform(0.75, 0.95), rng.uniform(0.8, 0.95));
  const double shade = rng.uniform(0.45, 0.65);
  const int pattern = static_cast<int>(rng.uniform_int(0, 2));
  const int period = static_cast<int>(rng.uniform_int(2, 4));
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x) {
      const bool dark = pattern == 0 ? (y / period) % 2 == 1
                        : pattern == 1 ? (x / period) % 2 == 1
                                       : ((y / period) + (x / period)) % 2 == 1;
      for (int c = 0; c < cfg.channels; ++c)
        s.texture.at(c, y, x) = s.footprint.at(y, x) ? channel_of(base, c) * (dark ? shade : 1.0) : 0.0;
    }
  return s;
}

ObjectSprite transform_object(const ObjectSprite& sprite, double scale, double rotation_deg) {
  if (!(scale > 0.0)) throw std::invalid_argument("transform_object: scale must be positive");
  const int c0 = sprite.center();
  const int half = static_cast<int>(std::ceil((c0 + 1) * scale * std::numbers::sqrt2)) + 1;
  const int canvas = 2 * half + 1;
  const double rad = rotation_deg * (kPi / 180.0);
  const double cs = std::cos(rad), sn = std::sin(rad);

  ObjectSprite out;
  out.kind = sprite.kind;
  out.footprint = Mask(canvas, canvas);
  out.texture = Image(sprite.texture.channels, canvas, canvas);
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x) {
      const double py = y - half, px = x - half;
      // inverse map: rotate by -theta, then undo the scale
      const double qx = (cs * px + sn * py) / scale;
      const double qy = (-sn * px + cs * py) / scale;
      const int sy = round_half_up(qy) + c0, sx = round_half_up(qx) + c0;
      if (sy < 0 || sy >= sprite.canvas() || sx < 0 || sx >= sprite.canvas()) continue;
      if (!sprite.footprint.at(sy, sx)) continue;
      out.footprint.at(y, x) = 1;
      for (int c = 0; c < sprite.texture.channels; ++c) out.texture.at(c, y, x) = sprite.texture.at(c, sy, sx);
    }
  if (out.footprint.empty()) throw std::runtime_error("transform_object: footprint is empty after transform");
  return out;
}

ScenePair generate_scene(std::uint64_t seed, const SceneConfig& cfg, const SceneOverrides& ov) {
  validate(cfg);
  Rng rng(derive_seed(seed, {3}));
  const int n = cfg.size;

  ScenePair pair;
  pair.log.seed = seed;
  const ObjectSprite source = make_source_object(seed, cfg);
  pair.log.shape = source.kind;

  const Bounds sb = footprint_bounds(source);
  pair.log.scale = ov.scale.value_or(rng.uniform(cfg.scale_min, cfg.scale_max));
  pair.log.rotation_deg = ov.rotation_deg.value_or(rng.uniform(0.0, 360.0));
  const ObjectSprite moved = transform_object(source, pair.log.scale, pair.log.rotation_deg);
  const Bounds mb = footprint_bounds(moved);
  const int ylo = -mb.ymin, yhi = n - 1 - mb.ymax, xlo = -mb.xmin, xhi = n - 1 - mb.xmax;
  if (ylo > yhi || xlo > xhi) throw std::runtime_error("generate_scene: transformed object exceeds the image");
  auto fits = [&](int cy, int cx) { return cy >= ylo && cy <= yhi && cx >= xlo && cx <= xhi; };

  const Image background = make_background(seed, cfg);
  bool placed = false;
  // Each attempt draws a source position, then pastes uniformly among all
  // in-bounds centres whose footprint avoids the resident object.
  for (int attempt = 1; attempt <= 20 && !placed; ++attempt) {
    pair.log.placement_attempts = attempt;
    pair.log.source_y = static_cast<int>(rng.uniform_int(-sb.ymin, n - 1 - sb.ymax));
    pair.log.source_x = static_cast<int>(rng.uniform_int(-sb.xmin, n - 1 - sb.xmax));
    pair.x0_ori = background;
    pair.resident_mask = Mask(n, n);
    if (cfg.resident_object)
      pair.resident_mask = composite(pair.x0_ori, source, pair.log.source_y, pair.log.source_x);

    if (ov.paste_center) {
      const auto [cy, cx] = *ov.paste_center;
      if (!fits(cy, cx)) throw std::runtime_error("generate_scene: forced paste position exceeds the image");
      pair.log.paste_y = cy;
      pair.log.paste_x = cx;
      placed = true;
      break;
    }
    std::vector<std::pair<int, int>> valid;
    for (int cy = ylo; cy <= yhi; ++cy)
      for (int cx = xlo; cx <= xhi; ++cx) {
        bool overlaps = false;
        for (int y = 0; y < moved.canvas() && !overlaps; ++y)
          for (int x = 0; x < moved.canvas() && !overlaps; ++x)
            overlaps = moved.footprint.at(y, x) &&
                       pair.resident_mask.at(cy + y - moved.center(), cx + x - moved.center());
        if (!overlaps) valid.emplace_back(cy, cx);
      }
    if (valid.empty()) continue;
    const auto pick = valid[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(valid.size()) - 1))];
    pair.log.paste_y = pick.first;
    pair.log.paste_x = pick.second;
    placed = true;
  }
  if (!placed)
    throw std::runtime_error("generate_scene: no background placement found after 20 retries (seed " +
                             std::to_string(seed) + ")");

  pair.x0_obj = pair.x0_ori;
  pair.mask = composite(pair.x0_obj, moved, pair.log.paste_y, pair.log.paste_x);
  const double frac = pair.mask.fraction();
  if (frac < cfg.area_min || frac > cfg.area_max)
    throw std::runtime_error("generate_scene: mask fraction " + std::to_string(frac) +
                             " outside configured bounds (seed " + std::to_string(seed) + ")");
  return pair;
}

// ---------------------------------------------------------------------------

Mask random_mask(const MaskSpec& spec, int height, int width) {
  Mask m(height, width);
  switch (spec.kind) {
    case MaskKind::rectangle: {
      if (spec.h <= 0 || spec.w <= 0) throw std::invalid_argument("random_mask: rectangle with non-positive size");
      for (int y = std::max(0, spec.y0); y < std::min(height, spec.y0 + spec.h); ++y)
        for (int x = std::max(0, spec.x0); x < std::min(width, spec.x0 + spec.w); ++x) m.at(y, x) = 1;
      break;
    }
    case MaskKind::ellipse: {
      if (!(spec.ry > 0.0 && spec.rx > 0.0)) throw std::invalid_argument("random_mask: ellipse with zero radius");
      const double a = spec.angle_deg * (kPi / 180.0);
      const double cs = std::cos(a), sn = std::sin(a);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double dy = y - spec.cy, dx = x - spec.cx;
          const double u = (cs * dy + sn * dx) / spec.ry, v = (-sn * dy + cs * dx) / spec.rx;
          m.at(y, x) = u * u + v * v <= 1.0;
        }
      break;
    }
    case MaskKind::irregular: {
      if (!(spec.brush_radius > 0.0) || spec.strokes < 1 || !(spec.step_min <= spec.step_max))
        throw std::invalid_argument("random_mask: invalid irregular brush parameters");
      Rng rng(derive_seed(spec.seed, {7}));
      double py = rng.uniform(0.0, height - 1.0), px = rng.uniform(0.0, width - 1.0);
      const double r2 = spec.brush_radius * spec.brush_radius;
      auto stamp = [&](double sy, double sx) {
        const int y0 = std::max(0, static_cast<int>(std::floor(sy - spec.brush_radius)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(sy + spec.brush_radius)));
        const int x0 = std::max(0, static_cast<int>(std::floor(sx - spec.brush_radius)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(sx + spec.brush_radius)));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x)
            if ((y - sy) * (y - sy) + (x - sx) * (x - sx) <= r2) m.at(y, x) = 1;
      };
      stamp(py, px);
      for (int s = 0; s < spec.strokes; ++s) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const double len = rng.uniform(spec.step_min, spec.step_max);
        const double ny = std::clamp(py + len * std::sin(a), 0.0, height - 1.0);
        const double nx = std::clamp(px + len * std::cos(a), 0.0, width - 1.0);
        const int pieces = std::max(1, static_cast<int>(std::ceil(2.0 * len)));
        for (int i = 1; i <= pieces; ++i) {
          const double f = static_cast<double>(i) / pieces;
          stamp(py + f * (ny - py), px + f * (nx - px));
        }
        py = ny;
        px = nx;
      }
      break;
    }
    case MaskKind::combined: {
      if (spec.parts.empty()) throw std::invalid_argument("random_mask: combined spec without parts");
      for (const auto& p : spec.parts) m = mask_union(m, random_mask(p, height, width));
      break;
    }
  }
  if (m.empty()) throw std::invalid_argument("random_mask: spec renders an empty mask");
  return m;
}

namespace {

MaskSpec draw_geometry(MaskKind kind, Rng& rng, std::uint64_t seed, int height, int width, double area_min,
                       double area_max) {
  MaskSpec s;
  s.kind = kind;
  s.seed = seed;
  const double target = rng.uniform(area_min, area_max) * height * width;
  const double aspect = rng.uniform(0.5, 2.0);
  switch (kind) {
    case MaskKind::rectangle: {
      s.h = std::clamp(round_half_up(std::sqrt(target * aspect)), 1, height);
      s.w = std::clamp(round_half_up(target / s.h), 1, width);
      s.y0 = static_cast<int>(rng.uniform_int(0, height - s.h));
      s.x0 = static_cast<int>(rng.uniform_int(0, width - s.w));
      break;
    }
    case MaskKind::ellipse: {
      s.ry = std::sqrt(target * aspect / kPi);
      s.rx = target / (kPi * s.ry);
      s.cy = rng.uniform(0.0, height - 1.0);
      s.cx = rng.uniform(0.0, width - 1.0);
      s.angle_deg = rng.uniform(0.0, 180.0);
      break;
    }
    case MaskKind::irregular: {
      s.brush_radius = rng.uniform(1.5, 3.0);
      s.strokes = std::max(2, static_cast<int>(target / (4.0 * s.brush_radius * s.brush_radius)));
      s.step_min = 2.0;
      s.step_max = 5.0;
      break;
    }
    case MaskKind::combined: {
      const int parts = static_cast<int>(rng.uniform_int(2, 3));
      for (int i = 0; i < parts; ++i) {
        const auto sub = static_cast<MaskKind>(rng.uniform_int(0, 2));
        s.parts.push_back(draw_geometry(sub, rng, derive_seed(seed, {static_cast<std::uint64_t>(i), 11}), height,
                                        width, area_min / parts, area_max / parts));
      }
      break;
    }
  }
  return s;
}

}  // namespace

MaskSpec draw_mask_spec(MaskKind kind, std::uint64_t seed, int height, int width, double area_min,
                        double area_max) {
  if (!(0.0 < area_min && area_min <= area_max && area_max <= 1.0))
    throw std::invalid_argument("draw_mask_spec: invalid area bounds");
  Rng rng(derive_seed(seed, {5}));
  for (int attempt = 0; attempt < 200; ++attempt) {
    MaskSpec s = draw_geometry(kind, rng, derive_seed(seed, {static_cast<std::uint64_t>(attempt)}), height,
                               width, area_min, area_max);
    s.seed = derive_seed(seed, {static_cast<std::uint64_t>(attempt)});
    try {
      const double f = random_mask(s, height, width).fraction();
      if (f >= area_min && f <= area_max) return s;
    } catch (const std::invalid_argument&) {
    }
  }
  throw std::runtime_error("draw_mask_spec: could not satisfy area bounds for " + to_string(kind));
}

Mask background_constrained_mask(const ScenePair& pair, const MaskSpec& spec, double area_min, double area_max) {
  const int h = pair.mask.height, w = pair.mask.width;
  if (pair.mask.full()) throw std::invalid_argument("background_constrained_mask: object mask covers the image");
  const Mask forbidden = mask_union(pair.mask, pair.resident_mask);
  Mask m = random_mask(spec, h, w);
  if (forbidden.empty() || mask_overlap(m, forbidden) == 0) return m;
  for (std::uint64_t k = 1; k < 20; ++k) {
    m = random_mask(draw_mask_spec(spec.kind, derive_seed(spec.seed, {k, 13}), h, w, area_min, area_max), h, w);
    if (mask_overlap(m, forbidden) == 0) return m;
  }
  throw std::runtime_error("background_constrained_mask: no background-only mask within 20 retries");
}

}  // namespace eradiff
