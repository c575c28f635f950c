#include "dcnet/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace dcnet {

bool RoIBox::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 >= x1 &&
         y2 >= y1;
}

double iou(const RoIBox& a, const RoIBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

RoIBox clip_box(const RoIBox& b, double width, double height) {
  RoIBox r = b;
  r.x1 = std::clamp(b.x1, 0.0, width);
  r.x2 = std::clamp(b.x2, 0.0, width);
  r.y1 = std::clamp(b.y1, 0.0, height);
  r.y2 = std::clamp(b.y2, 0.0, height);
  return r;
}

std::array<double, 4> BoxCoder::encode(const RoIBox& reference, const RoIBox& target) const {
  const double rw = std::max(reference.width(), 1e-6), rh = std::max(reference.height(), 1e-6);
  const double tw = std::max(target.width(), 1e-6), th = std::max(target.height(), 1e-6);
  const double rcx = reference.x1 + 0.5 * rw, rcy = reference.y1 + 0.5 * rh;
  const double tcx = target.x1 + 0.5 * tw, tcy = target.y1 + 0.5 * th;
  return {weights[0] * (tcx - rcx) / rw, weights[1] * (tcy - rcy) / rh, weights[2] * std::log(tw / rw),
          weights[3] * std::log(th / rh)};
}

RoIBox BoxCoder::decode(const RoIBox& reference, const std::array<double, 4>& d) const {
  const double rw = reference.width(), rh = reference.height();
  const double rcx = reference.x1 + 0.5 * rw, rcy = reference.y1 + 0.5 * rh;
  const double dw = std::min(d[2] / weights[2], max_log_scale);
  const double dh = std::min(d[3] / weights[3], max_log_scale);
  const double cx = rcx + d[0] / weights[0] * rw;
  const double cy = rcy + d[1] / weights[1] * rh;
  const double w = rw * std::exp(dw), h = rh * std::exp(dh);
  RoIBox out;
  out.x1 = cx - 0.5 * w;
  out.y1 = cy - 0.5 * h;
  out.x2 = cx + 0.5 * w;
  out.y2 = cy + 0.5 * h;
  return out;
}

}  // namespace dcnet
