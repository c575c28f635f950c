#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dcnet/boxes.hpp"
#include "dcnet/parameters.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet::data {

enum class ShapeKind {
  kCircle,
  kSquare,
  kTriangle,
  kCross,
  kRing,
  kDiamond,
  kStar,
  kBar,
  kLShape,
  kTShape,
  kCrescent,
  kPlus,
};

inline constexpr int kNumShapeClasses = 12;

std::string_view shape_name(int class_id);

// Membership test in the shape's unit frame (u, v in [-1, 1]).
bool shape_contains(ShapeKind kind, double u, double v);

struct ShapeSpec {
  int class_id = 0;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  std::uint64_t texture_seed = 0;
  double size = 16.0;  // side of the shape's unit frame, pixels
  bool allow_occlusion = false;
};

struct PlacedShape {
  ShapeSpec spec;
  double cx = 0.0, cy = 0.0;  // frame center, pixels
};

struct RenderedImage {
  Tensor pixels;               // [3, size, size] in [0, 1]
  std::vector<RoIBox> boxes;   // tight amodal boxes, class_id set, in draw order
};

// Deterministic render: background noise from `seed`, shapes painted in
// order (later shapes occlude earlier ones). 1-5 shapes.
RenderedImage render_image(std::span<const PlacedShape> shapes, int size, std::uint64_t seed);

// Tight pixel box of a shape placed alone; throws if it covers no pixel.
RoIBox shape_box(const PlacedShape& shape, int size);

// Random placement of `specs` inside a size x size image. Without occlusion
// boxes are disjoint; with it, one pair may overlap by at most
// `max_overlap` of the smaller box. Throws ConfigError after the retry budget.
std::vector<PlacedShape> place_shapes(std::span<const ShapeSpec> specs, int size, bool occlusion,
                                      double max_overlap, Rng& rng, int retry_limit = 200);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace dcnet::data
