#include "eradiff/config.hpp"
#include "eradiff/scenegen.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace eradiff;

namespace {

std::vector<ScenePair> scenes(int n, std::uint64_t first = 0) {
  std::vector<ScenePair> out;
  for (std::uint64_t s = first; static_cast<int>(out.size()) < n; ++s) {
    try {
      out.push_back(generate_scene(s, SceneConfig{}));
    } catch (const std::runtime_error&) {
    }
  }
  return out;
}

// Kolmogorov-Smirnov distance of samples against U[lo, hi].
double ks_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  double d = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = (v[i] - lo) / (hi - lo);
    d = std::max({d, cdf - i / n, (i + 1) / n - cdf});
  }
  return d;
}

Mask recentre(const Mask& m, int canvas) {
  Mask out(canvas, canvas);
  const int off = (canvas - m.height) / 2;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) out.at(y + off, x + off) = 1;
  return out;
}

ObjectSprite disc_sprite(double radius, int canvas) {
  ObjectSprite s;
  s.footprint = Mask(canvas, canvas);
  s.texture = Image(1, canvas, canvas);
  const int c = canvas / 2;
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x)
      if ((y - c) * (y - c) + (x - c) * (x - c) <= radius * radius) {
        s.footprint.at(y, x) = 1;
        s.texture.at(0, y, x) = 0.5;
      }
  return s;
}

}  // namespace

TEST_CASE("identity transform pasted at the source reproduces the original composite") {
  for (std::uint64_t seed : {1u, 2u, 3u, 10u}) {
    const ScenePair ref = generate_scene(seed, SceneConfig{});
    SceneOverrides ov;
    ov.scale = 1.0;
    ov.rotation_deg = 0.0;
    ov.paste_center = std::make_pair(ref.log.source_y, ref.log.source_x);
    const ScenePair p = generate_scene(seed, SceneConfig{}, ov);
    CHECK((p.x0_obj.data == p.x0_ori.data).all());
    CHECK((p.mask.bits == p.resident_mask.bits).all());
  }
}

TEST_CASE("scene pairs agree exactly outside the mask") {
  for (const auto& p : scenes(200)) {
    const Eigen::ArrayXd keep = 1.0 - p.mask.broadcast(p.x0_ori.channels);
    CHECK(((p.x0_ori.data * keep) == (p.x0_obj.data * keep)).all());
    for (Eigen::Index i = 0; i < p.x0_ori.data.size(); ++i)
      if (keep(i) == 1.0) REQUIRE(p.x0_ori.data(i) == p.x0_obj.data(i));
    CHECK(p.mask.fraction() >= 0.02);
    CHECK(p.mask.fraction() <= 0.35);
    CHECK(mask_overlap(p.mask, p.resident_mask) == 0);
    CHECK(p.x0_obj.data.minCoeff() >= 0.0);
    CHECK(p.x0_obj.data.maxCoeff() <= 1.0);
    CHECK(connected_components(p.mask) >= 1);
  }
}

TEST_CASE("scale and rotation draws are uniform over their ranges") {
  std::vector<double> scale, rot;
  for (const auto& p : scenes(1000)) {
    scale.push_back(p.log.scale);
    rot.push_back(p.log.rotation_deg);
    CHECK(p.log.scale >= 0.5);
    CHECK(p.log.scale <= 1.2);
  }
  // KS critical value at p = 0.01 for n = 1000 is 1.628 / sqrt(n).
  const double critical = 1.628 / std::sqrt(1000.0);
  CHECK(ks_uniform(scale, 0.5, 1.2) < critical);
  CHECK(ks_uniform(rot, 0.0, 360.0) < critical);
}

TEST_CASE("generate_scene is a pure function of seed and config") {
  const ScenePair a = generate_scene(42, SceneConfig{});
  const ScenePair b = generate_scene(42, SceneConfig{});
  CHECK((a.x0_ori.data == b.x0_ori.data).all());
  CHECK((a.x0_obj.data == b.x0_obj.data).all());
  CHECK((a.mask.bits == b.mask.bits).all());
  CHECK(a.log.scale == b.log.scale);
  const ScenePair c = generate_scene(43, SceneConfig{});
  CHECK_FALSE((a.x0_obj.data == c.x0_obj.data).all());
}

TEST_CASE("generate_scene rejects tiny images") {
  SceneConfig cfg;
  cfg.size = 12;
  CHECK_THROWS_AS(generate_scene(0, cfg), std::invalid_argument);
}

TEST_CASE("transform_object") {
  const ObjectSprite src = make_source_object(7, SceneConfig{});
  SUBCASE("unit scale, no rotation keeps the footprint") {
    const ObjectSprite t = transform_object(src, 1.0, 0.0);
    CHECK((recentre(src.footprint, t.canvas()).bits == t.footprint.bits).all());
  }
  SUBCASE("two half turns give back the original") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const ObjectSprite s = make_source_object(seed, SceneConfig{});
      const ObjectSprite twice = transform_object(transform_object(s, 1.0, 180.0), 1.0, 180.0);
      CHECK((recentre(s.footprint, twice.canvas()).bits == twice.footprint.bits).all());
    }
  }
  SUBCASE("doubling a 10-pixel-wide disc quadruples its area") {
    const ObjectSprite disc = disc_sprite(5.0, 13);
    const ObjectSprite big = transform_object(disc, 2.0, 0.0);
    const double ratio = static_cast<double>(big.footprint.area()) / static_cast<double>(disc.footprint.area());
    CHECK(std::abs(ratio - 4.0) < 0.4);
  }
  SUBCASE("degenerate inputs") {
    CHECK_THROWS_AS(transform_object(src, 0.0, 0.0), std::invalid_argument);
    ObjectSprite corner = disc_sprite(0.0, 9);
    corner.footprint = Mask(9, 9);
    corner.footprint.at(0, 0) = 1;  // shrinking maps every output pixel onto the empty centre
    CHECK_THROWS_AS(transform_object(corner, 0.01, 0.0), std::runtime_error);
  }
}

TEST_CASE("random mask families") {
  SUBCASE("rectangle over the whole image is all ones") {
    MaskSpec s;
    s.kind = MaskKind::rectangle;
    s.h = s.w = 32;
    CHECK(random_mask(s, 32, 32).full());
  }
  SUBCASE("ellipse with zero radii is rejected") {
    MaskSpec s;
    s.kind = MaskKind::ellipse;
    s.cy = s.cx = 16;
    CHECK_THROWS_AS(random_mask(s, 32, 32), std::invalid_argument);
  }
  SUBCASE("irregular brush strokes form one component") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Mask m = random_mask(draw_mask_spec(MaskKind::irregular, seed, 32, 32, 0.02, 0.35), 32, 32);
      CHECK(connected_components(m) == 1);
    }
  }
  SUBCASE("every family renders binary, non-empty masks within the area bounds") {
    for (auto kind : {MaskKind::rectangle, MaskKind::ellipse, MaskKind::irregular, MaskKind::combined})
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Mask m = random_mask(draw_mask_spec(kind, seed, 32, 32, 0.02, 0.35), 32, 32);
        CHECK_FALSE(m.empty());
        CHECK((m.bits <= 1).all());
        CHECK(m.fraction() >= 0.02);
        CHECK(m.fraction() <= 0.35);
      }
  }
  SUBCASE("names round-trip") {
    for (auto kind : {MaskKind::rectangle, MaskKind::ellipse, MaskKind::irregular, MaskKind::combined})
      CHECK(parse_mask_kind(to_string(kind)) == kind);
    CHECK_THROWS(parse_mask_kind("star"));
  }
}

TEST_CASE("connected components") {
  Mask m(4, 6);
  CHECK(connected_components(m) == 0);
  m.at(0, 0) = m.at(0, 1) = 1;
  m.at(3, 5) = 1;
  m.at(2, 2) = m.at(3, 3) = 1;  // diagonal neighbours are separate
  CHECK(connected_components(m) == 4);
}

TEST_CASE("background-constrained masks avoid the object") {
  double area = 0.0;
  const auto ps = scenes(100, 500);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mask m;
    for (std::uint64_t attempt = 0;; ++attempt) {
      REQUIRE(attempt < 9);
      try {
        const MaskSpec spec = draw_mask_spec(MaskKind::combined, 9000 + 100 * i + attempt, 32, 32, 0.02, 0.15);
        m = background_constrained_mask(ps[i], spec, 0.02, 0.15);
        break;
      } catch (const std::runtime_error&) {
      }
    }
    CHECK(mask_overlap(m, ps[i].mask) == 0);
    area += m.fraction();
  }
  area /= static_cast<double>(ps.size());
  CHECK(area >= 0.02);
  CHECK(area <= 0.15);

  ScenePair empty = ps[0];
  empty.mask = Mask(32, 32);
  empty.resident_mask = Mask(32, 32);
  const MaskSpec spec = draw_mask_spec(MaskKind::ellipse, 5, 32, 32, 0.02, 0.35);
  CHECK((background_constrained_mask(empty, spec).bits == random_mask(spec, 32, 32).bits).all());
}
