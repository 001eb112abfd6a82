#pragma once

#include "eradiff/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace eradiff {

enum class ShapeKind { disc, polygon, blob };
std::string to_string(ShapeKind kind);

struct SceneConfig {
  int size = 32;
  int channels = 3;
  double area_min = 0.02;  // bounds on the pasted footprint, as a fraction of the image
  double area_max = 0.35;
  double scale_min = 0.5;
  double scale_max = 1.2;
  double radius_min = 5.5;  // base object radius before scaling, pixels
  double radius_max = 8.0;
  bool resident_object = true;  // x0_ori keeps the source object at its original place
};

void validate(const SceneConfig& config);

/// An object cut-out: footprint plus the texture under it, on a square canvas
/// whose centre pixel is the object's anchor.
struct ObjectSprite {
  ShapeKind kind = ShapeKind::disc;
  Mask footprint;
  Image texture;

  int canvas() const { return footprint.height; }
  int center() const { return footprint.height / 2; }
};

struct TransformLog {
  std::uint64_t seed = 0;
  ShapeKind shape = ShapeKind::disc;
  double scale = 1.0;
  double rotation_deg = 0.0;
  int source_y = 0, source_x = 0;  // centre of the source object
  int paste_y = 0, paste_x = 0;    // centre of the pasted copy
  int placement_attempts = 0;
};

/// x0_ori: the original image. x0_obj: x0_ori with a transformed copy of the
/// source object pasted onto background. mask: footprint of that copy.
struct ScenePair {
  Image x0_ori;
  Image x0_obj;
  Mask mask;
  Mask resident_mask;  // footprint of the source object inside x0_ori (empty if disabled)
  TransformLog log;
};

/// Forces parts of the random draw; used to build identity scenes in tests.
struct SceneOverrides {
  std::optional<double> scale;
  std::optional<double> rotation_deg;
  std::optional<std::pair<int, int>> paste_center;  // (y, x); skips the overlap test
};

ScenePair generate_scene(std::uint64_t seed, const SceneConfig& config, const SceneOverrides& overrides = {});

/// Nearest-neighbour scale + rotation (degrees, counter-clockwise) about the
/// sprite centre. Throws if the footprint vanishes.
ObjectSprite transform_object(const ObjectSprite& sprite, double scale, double rotation_deg);

/// The untransformed source object drawn for `seed` (exposed for tests).
ObjectSprite make_source_object(std::uint64_t seed, const SceneConfig& config);

// ---------------------------------------------------------------------------
// Random mask families

enum class MaskKind { rectangle, ellipse, irregular, combined };
std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& name);

struct MaskSpec {
  MaskKind kind = MaskKind::rectangle;
  // rectangle: [y0, y0+h) x [x0, x0+w)
  int y0 = 0, x0 = 0, h = 0, w = 0;
  // ellipse
  double cy = 0, cx = 0, ry = 0, rx = 0, angle_deg = 0;
  // irregular: brush random walk
  int strokes = 8;
  double step_min = 2.0, step_max = 5.0, brush_radius = 2.0;
  // combined
  std::vector<MaskSpec> parts;
  std::uint64_t seed = 0;
};

/// Renders a mask; throws std::invalid_argument for specs that render empty.
Mask random_mask(const MaskSpec& spec, int height, int width);

/// Draws geometry for `kind` whose rendered area lies in [area_min, area_max].
MaskSpec draw_mask_spec(MaskKind kind, std::uint64_t seed, int height, int width, double area_min,
                        double area_max);

/// A mask of spec's family lying entirely outside the pair's object footprints.
/// Retries with fresh geometry (derived from spec.seed) up to 20 times.
Mask background_constrained_mask(const ScenePair& pair, const MaskSpec& spec, double area_min = 0.02,
                                 double area_max = 0.35);

}  // namespace eradiff
