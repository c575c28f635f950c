#include "dcnet/cfa.hpp"

#include <cmath>

namespace dcnet::cfa {

namespace {

// Appends bilinear taps for grid coordinate (y, x) scaled by `w`.
void add_bilinear(std::int64_t h, std::int64_t wd, double y, double x, double w, SamplingPlan& plan) {
  if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(wd)) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y0 = static_cast<std::int64_t>(std::floor(y));
  auto x0 = static_cast<std::int64_t>(std::floor(x));
  std::int64_t y1 = y0 + 1, x1 = x0 + 1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = static_cast<double>(y0);
  }
  if (x0 >= wd - 1) {
    x0 = x1 = wd - 1;
    x = static_cast<double>(x0);
  }
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  plan.source.push_back(y0 * wd + x0);
  plan.weight.push_back(w * hy * hx);
  plan.source.push_back(y0 * wd + x1);
  plan.weight.push_back(w * hy * lx);
  plan.source.push_back(y1 * wd + x0);
  plan.weight.push_back(w * ly * hx);
  plan.source.push_back(y1 * wd + x1);
  plan.weight.push_back(w * ly * lx);
}

}  // namespace

SamplingPlan roi_align_plan(std::int64_t height, std::int64_t width, const RoIBox& box, int resolution,
                            double spatial_scale, int sampling_ratio, PoolStatus* status) {
  if (resolution < 1) throw InvalidArgument("roi_align: resolution must be >= 1");
  if (!(spatial_scale > 0.0)) throw InvalidArgument("roi_align: spatial_scale must be positive");
  if (sampling_ratio < 1) throw InvalidArgument("roi_align: sampling_ratio must be >= 1");
  if (!box.valid()) throw InvalidArgument("roi_align: box must be finite with x2 >= x1, y2 >= y1");

  SamplingPlan plan;
  plan.out_h = plan.out_w = resolution;
  plan.offsets.reserve(static_cast<std::size_t>(resolution * resolution) + 1);
  plan.offsets.push_back(0);

  const double x1 = box.x1 * spatial_scale, y1 = box.y1 * spatial_scale;
  const double x2 = box.x2 * spatial_scale, y2 = box.y2 * spatial_scale;
  const double fh = static_cast<double>(height), fw = static_cast<double>(width);
  const bool degenerate = x2 <= x1 || y2 <= y1;
  bool outside;
  if (degenerate) {
    const double cx = 0.5 * (x1 + x2), cy = 0.5 * (y1 + y2);
    outside = cx < 0.0 || cy < 0.0 || cx > fw || cy > fh;
  } else {
    outside = x2 <= 0.0 || y2 <= 0.0 || x1 >= fw || y1 >= fh;
  }
  PoolStatus st = outside ? PoolStatus::kOutOfBounds : (degenerate ? PoolStatus::kDegenerate : PoolStatus::kOk);
  if (status) *status = st;

  const double bin_h = (y2 - y1) / resolution, bin_w = (x2 - x1) / resolution;
  const double inv = 1.0 / static_cast<double>(sampling_ratio * sampling_ratio);
  for (int py = 0; py < resolution; ++py) {
    for (int px = 0; px < resolution; ++px) {
      if (st == PoolStatus::kDegenerate) {
        add_bilinear(height, width, 0.5 * (y1 + y2) - 0.5, 0.5 * (x1 + x2) - 0.5, 1.0, plan);
      } else if (st == PoolStatus::kOk) {
        for (int iy = 0; iy < sampling_ratio; ++iy) {
          const double sy = y1 + py * bin_h + (iy + 0.5) * bin_h / sampling_ratio;
          for (int ix = 0; ix < sampling_ratio; ++ix) {
            const double sx = x1 + px * bin_w + (ix + 0.5) * bin_w / sampling_ratio;
            add_bilinear(height, width, sy - 0.5, sx - 0.5, inv, plan);
          }
        }
      }
      plan.offsets.push_back(static_cast<std::int64_t>(plan.source.size()));
    }
  }
  return plan;
}

RoiAlignResult roi_align(const Tensor& feature, const RoIBox& box, int resolution, double spatial_scale,
                         int sampling_ratio) {
  if (feature.rank() != 3) throw InvalidArgument("roi_align: feature must be [C,H,W]");
  RoiAlignResult r;
  SamplingPlan plan =
      roi_align_plan(feature.dim(1), feature.dim(2), box, resolution, spatial_scale, sampling_ratio, &r.status);
  r.pooled = resample(feature, plan);
  return r;
}

Tensor resize_bilinear(const Tensor& map, int target) {
  if (map.rank() != 3) throw InvalidArgument("resize_bilinear: map must be [C,r,r]");
  if (target < 1) throw InvalidArgument("resize_bilinear: target must be >= 1");
  const std::int64_t h = map.dim(1), w = map.dim(2);
  if (h == target && w == target) return map;

  SamplingPlan plan;
  plan.out_h = plan.out_w = target;
  plan.offsets.push_back(0);
  auto coord = [target](std::int64_t i, std::int64_t n) {
    return target > 1 ? static_cast<double>(i * (n - 1)) / static_cast<double>(target - 1) : 0.0;
  };
  for (std::int64_t oy = 0; oy < target; ++oy) {
    const double y = coord(oy, h);
    const auto y0 = std::min(static_cast<std::int64_t>(std::floor(y)), h - 1);
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double ly = y - static_cast<double>(y0);
    for (std::int64_t ox = 0; ox < target; ++ox) {
      const double x = coord(ox, w);
      const auto x0 = std::min(static_cast<std::int64_t>(std::floor(x)), w - 1);
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double lx = x - static_cast<double>(x0);
      const std::int64_t src[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
      const double wt[4] = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
      for (int k = 0; k < 4; ++k) {
        plan.source.push_back(src[k]);
        plan.weight.push_back(wt[k]);
      }
      plan.offsets.push_back(static_cast<std::int64_t>(plan.source.size()));
    }
  }
  return resample(map, plan);
}

Params make_params(ParameterStore& store, const std::string& prefix, int feature_dim, Rng& rng) {
  if (feature_dim < 4 || feature_dim % 4 != 0) {
    throw ConfigError("cfa: feature dimension must be a positive multiple of 4");
  }
  const std::int64_t c = feature_dim, hidden = c / 4;
  Params p;
  for (std::size_t b = 0; b < p.branches.size(); ++b) {
    const std::string n = prefix + "branch" + std::to_string(kResolutions[b]) + ".";
    p.branches[b].fc1_weight = store.add_he(n + "fc1.weight", Shape{hidden, c}, rng);
    p.branches[b].fc1_bias = store.add_zeros(n + "fc1.bias", Shape{hidden});
    p.branches[b].fc2_weight = store.add_he(n + "fc2.weight", Shape{1, hidden}, rng);
    p.branches[b].fc2_bias = store.add_zeros(n + "fc2.bias", Shape{1});
  }
  return p;
}

Tensor branch_weight(const Tensor& pooled, const BranchParams& params) {
  Tensor v = reshape(global_avg_pool(pooled), Shape{1, pooled.dim(0)});
  Tensor h = relu(linear(v, params.fc1_weight, params.fc1_bias));
  return reshape(linear(h, params.fc2_weight, params.fc2_bias), Shape{1});
}

PooledFeature aggregate(const Tensor& feature, const RoIBox& box, const Params& params,
                        const AggregateOptions& opts) {
  PooledFeature out;
  std::vector<Tensor> logits;
  for (std::size_t b = 0; b < kResolutions.size(); ++b) {
    RoiAlignResult r = roi_align(feature, box, kResolutions[b], opts.spatial_scale, opts.sampling_ratio);
    out.status = r.status;
    out.per_branch[b] = r.pooled;
    if (opts.attention) logits.push_back(branch_weight(r.pooled, params.branches[b]));
  }
  out.weights = opts.attention ? softmax(concat(logits, 0), 0) : Tensor::full(Shape{3}, 1.0 / 3.0);

  for (std::size_t b = 0; b < kResolutions.size(); ++b) {
    Tensor resized = resize_bilinear(out.per_branch[b], kFusedResolution);
    const std::int64_t idx = static_cast<std::int64_t>(b);
    Tensor term = scale_by(resized, gather(out.weights, std::span<const std::int64_t>(&idx, 1)));
    out.fused = out.fused.defined() ? add(out.fused, term) : term;
  }
  return out;
}

}  // namespace dcnet::cfa
