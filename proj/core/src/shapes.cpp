#include "dcnet/shapes.hpp"

#include "dcnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dcnet::data {

namespace {

constexpr std::string_view kNames[kNumShapeClasses] = {"circle", "square", "triangle", "cross",   "ring",     "diamond",
                                                      "star",   "bar",    "l_shape",  "t_shape", "crescent", "plus"};

bool in_star(double u, double v) {
  // Five-pointed star polygon, outer radius 1, inner 0.45, point up.
  std::array<std::pair<double, double>, 10> poly;
  for (int i = 0; i < 10; ++i) {
    const double r = (i % 2 == 0) ? 1.0 : 0.45;
    const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
    poly[static_cast<std::size_t>(i)] = {r * std::cos(a), r * std::sin(a)};
  }
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

struct Texture {
  double freq, angle, phase, amp;
};

Texture make_texture(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {1.5 + 3.0 * u(rng), u(rng) * std::numbers::pi, u(rng) * 2 * std::numbers::pi, 0.08 + 0.12 * u(rng)};
}

}  // namespace

std::string_view shape_name(int class_id) {
  if (class_id < 0 || class_id >= kNumShapeClasses) throw InvalidArgument("unknown shape class");
  return kNames[class_id];
}

bool shape_contains(ShapeKind kind, double u, double v) {
  if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
  const double r2 = u * u + v * v;
  switch (kind) {
    case ShapeKind::kCircle: return r2 <= 1.0;
    case ShapeKind::kSquare: return true;
    case ShapeKind::kTriangle: return std::abs(u) <= 0.5 * (v + 1.0);
    case ShapeKind::kCross: return std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35;
    case ShapeKind::kRing: return r2 <= 1.0 && r2 >= 0.25;
    case ShapeKind::kDiamond: return std::abs(u) + std::abs(v) <= 1.0;
    case ShapeKind::kStar: return in_star(u, v);
    case ShapeKind::kBar: return std::abs(v) <= 0.3;
    case ShapeKind::kLShape: return u <= -0.3 || v >= 0.3;
    case ShapeKind::kTShape: return v <= -0.35 || std::abs(u) <= 0.3;
    case ShapeKind::kCrescent: return r2 <= 1.0 && (u - 0.45) * (u - 0.45) + v * v > 0.64;
    case ShapeKind::kPlus: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
  }
  return false;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RoIBox shape_box(const PlacedShape& s, int size) {
  const double half = 0.5 * s.spec.size;
  const auto kind = static_cast<ShapeKind>(s.spec.class_id);
  int x0 = size, y0 = size, x1 = -1, y1 = -1;
  const int lo_x = std::max(0, static_cast<int>(std::floor(s.cx - half)) - 1);
  const int hi_x = std::min(size - 1, static_cast<int>(std::ceil(s.cx + half)) + 1);
  const int lo_y = std::max(0, static_cast<int>(std::floor(s.cy - half)) - 1);
  const int hi_y = std::min(size - 1, static_cast<int>(std::ceil(s.cy + half)) + 1);
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      if (shape_contains(kind, (x + 0.5 - s.cx) / half, (y + 0.5 - s.cy) / half)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw InvalidArgument("shape covers no pixel of the image");
  RoIBox b;
  b.x1 = x0;
  b.y1 = y0;
  b.x2 = x1 + 1;
  b.y2 = y1 + 1;
  b.class_id = s.spec.class_id;
  return b;
}

RenderedImage render_image(std::span<const PlacedShape> shapes, int size, std::uint64_t seed) {
  if (shapes.empty() || shapes.size() > 5) {
    throw InvalidArgument("render_image: need 1-5 shapes, got " + std::to_string(shapes.size()));
  }
  if (size < 8) throw InvalidArgument("render_image: image side must be >= 8");
  for (const auto& s : shapes) {
    if (s.spec.class_id < 0 || s.spec.class_id >= kNumShapeClasses) throw InvalidArgument("render_image: bad class");
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);
  const auto n = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  std::vector<double> px(3 * n);
  const double base = 0.15 + 0.3 * u01(rng);
  const double gx = 0.15 * (u01(rng) - 0.5), gy = 0.15 * (u01(rng) - 0.5);
  std::array<double, 3> tint{u01(rng) * 0.1, u01(rng) * 0.1, u01(rng) * 0.1};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double g = base + gx * (x / static_cast<double>(size)) + gy * (y / static_cast<double>(size));
      for (std::size_t c = 0; c < 3; ++c)
        px[c * n + static_cast<std::size_t>(y * size + x)] = g + tint[c] + noise(rng);
    }
  }

  RenderedImage out;
  for (const auto& s : shapes) {
    out.boxes.push_back(shape_box(s, size));
    const Texture tex = make_texture(s.spec.texture_seed);
    const auto kind = static_cast<ShapeKind>(s.spec.class_id);
    const double half = 0.5 * s.spec.size;
    const RoIBox& b = out.boxes.back();
    const double ca = std::cos(tex.angle), sa = std::sin(tex.angle);
    for (int y = static_cast<int>(b.y1); y < static_cast<int>(b.y2); ++y) {
      for (int x = static_cast<int>(b.x1); x < static_cast<int>(b.x2); ++x) {
        const double u = (x + 0.5 - s.cx) / half, v = (y + 0.5 - s.cy) / half;
        if (!shape_contains(kind, u, v)) continue;
        const double pattern = 1.0 + tex.amp * std::sin(tex.freq * std::numbers::pi * (u * ca + v * sa) + tex.phase);
        for (std::size_t c = 0; c < 3; ++c)
          px[c * n + static_cast<std::size_t>(y * size + x)] = s.spec.color[c] * pattern;
      }
    }
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  out.pixels = Tensor(Shape{3, size, size}, std::move(px));
  return out;
}

std::vector<PlacedShape> place_shapes(std::span<const ShapeSpec> specs, int size, bool occlusion,
                                      double max_overlap, Rng& rng, int retry_limit) {
  if (specs.empty()) throw InvalidArgument("place_shapes: no shapes requested");
  for (int attempt = 0; attempt < 20; ++attempt) {
    std::vector<PlacedShape> placed;
    std::vector<RoIBox> boxes;
    bool overlap_used = !occlusion;
    bool failed = false;
    for (const auto& spec : specs) {
      const double half = 0.5 * spec.size;
      if (spec.size >= size) throw ConfigError("shape larger than the image");
      std::uniform_real_distribution<double> pos(half, size - half);
      bool ok = false;
      for (int t = 0; t < retry_limit && !ok; ++t) {
        PlacedShape cand{spec, pos(rng), pos(rng)};
        RoIBox box = shape_box(cand, size);
        int overlaps = 0;
        bool within_budget = true;
        for (const auto& other : boxes) {
          const double iw = std::min(box.x2, other.x2) - std::max(box.x1, other.x1);
          const double ih = std::min(box.y2, other.y2) - std::max(box.y1, other.y1);
          if (iw > -1.0 && ih > -1.0) {
            ++overlaps;
            const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
            if (inter > max_overlap * std::min(box.area(), other.area())) within_budget = false;
          }
        }
        if (overlaps == 0 || (overlaps == 1 && !overlap_used && within_budget && spec.allow_occlusion)) {
          if (overlaps > 0) overlap_used = true;
          placed.push_back(cand);
          boxes.push_back(box);
          ok = true;
        }
      }
      if (!ok) {
        failed = true;
        break;
      }
    }
    if (!failed) return placed;
  }
  throw ConfigError("place_shapes: could not place " + std::to_string(specs.size()) +
                    " shapes within the occlusion budget");
}

}  // namespace dcnet::data
