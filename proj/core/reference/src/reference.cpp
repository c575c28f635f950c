#include "dcnet/reference/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/multiprecision/cpp_int.hpp>

#include "dcnet/errors.hpp"

namespace dcnet::reference {

namespace {

double at3(const Tensor& t, std::int64_t c, std::int64_t y, std::int64_t x) {
  return t.data()[static_cast<std::size_t>((c * t.dim(1) + y) * t.dim(2) + x)];
}

// Key and value vectors of one feature map, per location: [HW][channels].
struct PixelMaps {
  std::vector<std::vector<double>> key, value;
};

PixelMaps encode(const Tensor& feat, const drd::EncoderParams& p) {
  const Tensor k = conv2d(feat, p.key.weight, p.key.bias, 1, 1);
  const Tensor v = conv2d(feat, p.value.weight, p.value.bias, 1, 1);
  const std::int64_t h = feat.dim(1), w = feat.dim(2);
  PixelMaps m;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::vector<double> kv, vv;
      for (std::int64_t c = 0; c < k.dim(0); ++c) kv.push_back(at3(k, c, y, x));
      for (std::int64_t c = 0; c < v.dim(0); ++c) vv.push_back(at3(v, c, y, x));
      m.key.push_back(std::move(kv));
      m.value.push_back(std::move(vv));
    }
  }
  return m;
}

std::vector<double> apply(const Tensor& w, const std::vector<double>& v) {
  const std::int64_t out = w.dim(0), in = w.dim(1);
  std::vector<double> r(static_cast<std::size_t>(out), 0.0);
  for (std::int64_t o = 0; o < out; ++o)
    for (std::int64_t i = 0; i < in; ++i) r[static_cast<std::size_t>(o)] += w.data()[static_cast<std::size_t>(o * in + i)] * v[static_cast<std::size_t>(i)];
  return r;
}

std::vector<std::vector<double>> attention_rows(const PixelMaps& q, const PixelMaps& s, const drd::Params& p) {
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<double>> sk;
  for (const auto& k : s.key) sk.push_back(apply(p.phi_prime.weight, k));
  for (const auto& k : q.key) {
    const std::vector<double> qk = apply(p.phi.weight, k);
    std::vector<double> logits;
    for (const auto& s_k : sk) logits.push_back(std::inner_product(qk.begin(), qk.end(), s_k.begin(), 0.0));
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (double& l : logits) l /= z;
    rows.push_back(std::move(logits));
  }
  return rows;
}

double bilinear(const Tensor& f, std::int64_t c, double y, double x) {
  const auto h = static_cast<double>(f.dim(1)), w = static_cast<double>(f.dim(2));
  if (y < -1.0 || y > h || x < -1.0 || x > w) return 0.0;
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const double fy = std::floor(y), fx = std::floor(x);
  const double dy = y - fy, dx = x - fx;
  const auto iy = static_cast<std::int64_t>(fy), ix = static_cast<std::int64_t>(fx);
  const std::int64_t iy1 = std::min(iy + 1, f.dim(1) - 1), ix1 = std::min(ix + 1, f.dim(2) - 1);
  return (1 - dy) * (1 - dx) * at3(f, c, iy, ix) + (1 - dy) * dx * at3(f, c, iy, ix1) +
         dy * (1 - dx) * at3(f, c, iy1, ix) + dy * dx * at3(f, c, iy1, ix1);
}

using Rational = boost::multiprecision::cpp_rational;

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const std::int64_t ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t co = weight.dim(0), k = weight.dim(2);
  const std::int64_t oh = (h + 2 * padding - k) / stride + 1, ow = (w + 2 * padding - k) / stride + 1;
  Tensor out(Shape{co, oh, ow});
  auto o = out.mutable_data();
  for (std::int64_t c = 0; c < co; ++c) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        double acc = bias.defined() ? bias.data()[static_cast<std::size_t>(c)] : 0.0;
        for (std::int64_t i = 0; i < ci; ++i) {
          for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t sy = y * stride + ky - padding, sx = x * stride + kx - padding;
              if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
              acc += weight.data()[static_cast<std::size_t>(((c * ci + i) * k + ky) * k + kx)] * at3(input, i, sy, sx);
            }
          }
        }
        o[static_cast<std::size_t>((c * oh + y) * ow + x)] = acc;
      }
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw InvalidArgument("reference matmul: inner dimensions differ");
  Tensor out(Shape{m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) acc += a.data()[static_cast<std::size_t>(i * k + t)] * b.data()[static_cast<std::size_t>(t * n + j)];
      out.mutable_data()[static_cast<std::size_t>(i * n + j)] = acc;
    }
  return out;
}

Tensor attention(const Tensor& query_feature, const Tensor& support_feature, const drd::Params& params) {
  const auto rows = attention_rows(encode(query_feature, params.query), encode(support_feature, params.support), params);
  const auto n = static_cast<std::int64_t>(rows.size()), m = static_cast<std::int64_t>(rows.front().size());
  Tensor out(Shape{n, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out.mutable_data()[static_cast<std::size_t>(i * m + j)] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return out;
}

Tensor distill(const Tensor& query_feature, std::span<const Tensor> support_features, const drd::Params& params) {
  if (support_features.empty()) throw InvalidArgument("reference distill: empty support list");
  const PixelMaps q = encode(query_feature, params.query);
  const std::int64_t h = query_feature.dim(1), w = query_feature.dim(2);
  const std::size_t cv = q.value.front().size();
  std::vector<std::vector<double>> retrieved(q.value.size(), std::vector<double>(cv, 0.0));
  for (const auto& sf : support_features) {
    const PixelMaps s = encode(sf, params.support);
    const auto rows = attention_rows(q, s, params);
    for (std::size_t i = 0; i < q.value.size(); ++i)
      for (std::size_t j = 0; j < s.value.size(); ++j)
        for (std::size_t c = 0; c < cv; ++c) retrieved[i][c] += rows[i][j] * s.value[j][c];
  }
  Tensor out(Shape{static_cast<std::int64_t>(2 * cv), h, w});
  auto o = out.mutable_data();
  const auto hw = static_cast<std::size_t>(h * w);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < cv; ++c) {
      o[c * hw + i] = q.value[i][c];
      o[(cv + c) * hw + i] = retrieved[i][c];
    }
  }
  return out;
}

Tensor roi_align(const Tensor& feature, const RoIBox& box, int resolution, double spatial_scale, int sampling_ratio) {
  const std::int64_t channels = feature.dim(0);
  const double fh = static_cast<double>(feature.dim(1)), fw = static_cast<double>(feature.dim(2));
  Tensor out(Shape{channels, resolution, resolution});
  auto o = out.mutable_data();
  const double x1 = box.x1 * spatial_scale, x2 = box.x2 * spatial_scale;
  const double y1 = box.y1 * spatial_scale, y2 = box.y2 * spatial_scale;
  const double cx = 0.5 * (x1 + x2), cy = 0.5 * (y1 + y2);
  const bool degenerate = !(x2 > x1) || !(y2 > y1);
  const bool outside = degenerate ? (cx < 0 || cy < 0 || cx > fw || cy > fh) : (x2 <= 0 || y2 <= 0 || x1 >= fw || y1 >= fh);
  if (outside) return out;
  const double bw = (x2 - x1) / resolution, bh = (y2 - y1) / resolution;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int py = 0; py < resolution; ++py) {
      for (int px = 0; px < resolution; ++px) {
        double v = 0.0;
        if (degenerate) {
          v = bilinear(feature, c, cy - 0.5, cx - 0.5);
        } else {
          for (int iy = 0; iy < sampling_ratio; ++iy)
            for (int ix = 0; ix < sampling_ratio; ++ix) {
              const double sy = y1 + bh * (py + (iy + 0.5) / sampling_ratio);
              const double sx = x1 + bw * (px + (ix + 0.5) / sampling_ratio);
              v += bilinear(feature, c, sy - 0.5, sx - 0.5);
            }
          v /= sampling_ratio * sampling_ratio;
        }
        o[static_cast<std::size_t>((c * resolution + py) * resolution + px)] = v;
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& map, int target) {
  const std::int64_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  Tensor out(Shape{c, target, target});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int y = 0; y < target; ++y)
      for (int x = 0; x < target; ++x) {
        const double sy = target > 1 ? y * static_cast<double>(h - 1) / (target - 1) : 0.0;
        const double sx = target > 1 ? x * static_cast<double>(w - 1) / (target - 1) : 0.0;
        out.mutable_data()[static_cast<std::size_t>((ch * target + y) * target + x)] = bilinear(map, ch, sy, sx);
      }
  return out;
}

double iou(const RoIBox& a, const RoIBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<det::Detection> nms(std::vector<det::Detection> boxes, double iou_threshold) {
  std::vector<det::Detection> kept;
  std::vector<bool> alive(boxes.size(), true);
  for (;;) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    }
    if (best == boxes.size()) break;
    kept.push_back(boxes[best]);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && reference::iou(boxes[i].box, boxes[best].box) > iou_threshold) alive[i] = false;
    }
  }
  return kept;
}

std::vector<RoIBox> proposals(std::span<const RoIBox> anchors, std::span<const double> logits,
                              std::span<const double> deltas, const det::RpnConfig& cfg, double image_w,
                              double image_h) {
  std::vector<det::Detection> cand;
  const double clamp = std::log(1000.0 / 16.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const RoIBox& a = anchors[i];
    const double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
    const double acx = a.x1 + 0.5 * aw, acy = a.y1 + 0.5 * ah;
    const double cx = acx + deltas[4 * i] * aw, cy = acy + deltas[4 * i + 1] * ah;
    const double w = aw * std::exp(std::min(deltas[4 * i + 2], clamp));
    const double h = ah * std::exp(std::min(deltas[4 * i + 3], clamp));
    det::Detection d;
    d.box.x1 = std::clamp(cx - 0.5 * w, 0.0, image_w);
    d.box.x2 = std::clamp(cx + 0.5 * w, 0.0, image_w);
    d.box.y1 = std::clamp(cy - 0.5 * h, 0.0, image_h);
    d.box.y2 = std::clamp(cy + 0.5 * h, 0.0, image_h);
    d.score = 1.0 / (1.0 + std::exp(-logits[i]));
    cand.push_back(d);
  }
  // Stable so equal scores keep anchor order, as in the implementation.
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  if (cand.size() > static_cast<std::size_t>(cfg.pre_nms_top_k)) cand.resize(static_cast<std::size_t>(cfg.pre_nms_top_k));
  auto kept = nms(cand, cfg.nms_iou);
  std::vector<RoIBox> out;
  for (std::size_t i = 0; i < kept.size() && static_cast<int>(i) < cfg.max_proposals; ++i) out.push_back(kept[i].box);
  return out;
}

std::optional<double> average_precision(std::span<const eval::ImageResult> images, int class_id,
                                        double iou_threshold) {
  struct Item {
    double score;
    std::size_t image, index;
  };
  std::vector<Item> items;
  long npos = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const auto& g : images[i].gt) npos += (g.class_id == class_id);
    for (std::size_t j = 0; j < images[i].detections.size(); ++j)
      if (images[i].detections[j].class_id == class_id) items.push_back({images[i].detections[j].score, i, j});
  }
  if (npos == 0) return std::nullopt;
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image != b.image ? a.image < b.image : a.index < b.index;
  });
  std::vector<std::vector<bool>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gt.size(), false);
  std::vector<bool> is_tp;
  for (const auto& it : items) {
    const auto& gts = images[it.image].gt;
    const RoIBox& box = images[it.image].detections[it.index].box;
    std::size_t best = gts.size();
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != class_id) continue;
      const double o = reference::iou(box, gts[g]);
      if (o > best_iou) {
        best_iou = o;
        best = g;
      }
    }
    const bool tp = best < gts.size() && best_iou >= iou_threshold && !used[it.image][best];
    if (tp) used[it.image][best] = true;
    is_tp.push_back(tp);
  }
  // Each true positive adds 1/npos of recall, credited with the best
  // precision reached at that recall or beyond.
  std::vector<Rational> precision;
  long tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    precision.emplace_back(tp, static_cast<long>(i + 1));
  }
  Rational ap = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    if (!is_tp[i]) continue;
    Rational best = 0;
    for (std::size_t j = i; j < precision.size(); ++j) best = std::max(best, precision[j]);
    ap += best / npos;
  }
  return static_cast<double>(ap);
}

}  // namespace dcnet::reference
