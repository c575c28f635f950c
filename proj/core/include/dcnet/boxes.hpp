#pragma once

#include <array>
#include <optional>

namespace dcnet {

// Axis-aligned box in image pixel coordinates (x2 >= x1, y2 >= y1).
struct RoIBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  std::optional<int> class_id;
  std::optional<double> score;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;  // finite and ordered
};

double iou(const RoIBox& a, const RoIBox& b);

RoIBox clip_box(const RoIBox& b, double width, double height);

// Center/size log-space box parameterization with per-coordinate weights.
struct BoxCoder {
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  double max_log_scale = 4.135166556742356;  // log(1000 / 16)

  std::array<double, 4> encode(const RoIBox& reference, const RoIBox& target) const;
  RoIBox decode(const RoIBox& reference, const std::array<double, 4>& deltas) const;
};

}  // namespace dcnet
