#pragma once

#include <array>
#include <string>

#include "dcnet/boxes.hpp"
#include "dcnet/ops.hpp"
#include "dcnet/parameters.hpp"
#include "dcnet/tensor.hpp"

// Context-aware feature aggregation: pool a proposal at 4x4, 8x8 and 12x12,
// score each pooled map with its own attention branch, and fuse the maps
// (resized to 8x8) with softmax-normalized branch weights.
namespace dcnet::cfa {

inline constexpr std::array<int, 3> kResolutions{4, 8, 12};
inline constexpr int kFusedResolution = 8;

enum class PoolStatus { kOk, kDegenerate, kOutOfBounds };

// Sampling weights for RoI Align of `box` (image coordinates) on an HxW map.
// Pixel centers sit at half-integer feature coordinates.
SamplingPlan roi_align_plan(std::int64_t height, std::int64_t width, const RoIBox& box, int resolution,
                            double spatial_scale, int sampling_ratio, PoolStatus* status = nullptr);

struct RoiAlignResult {
  Tensor pooled;  // [C, r, r]
  PoolStatus status = PoolStatus::kOk;
};

RoiAlignResult roi_align(const Tensor& feature, const RoIBox& box, int resolution, double spatial_scale,
                         int sampling_ratio = 2);

// Align-corners bilinear resize of [C,r,r] to [C,target,target].
Tensor resize_bilinear(const Tensor& map, int target);

struct BranchParams {
  Tensor fc1_weight;  // [C/4, C]
  Tensor fc1_bias;
  Tensor fc2_weight;  // [1, C/4]
  Tensor fc2_bias;
};

struct Params {
  std::array<BranchParams, 3> branches;
};

Params make_params(ParameterStore& store, const std::string& prefix, int feature_dim, Rng& rng);

// fc2(relu(fc1(global_avg_pool(pooled)))) -> [1]
Tensor branch_weight(const Tensor& pooled, const BranchParams& params);

struct AggregateOptions {
  double spatial_scale = 1.0 / 8.0;
  int sampling_ratio = 2;
  // When false the three resized maps are averaged with fixed weights.
  bool attention = true;
};

struct PooledFeature {
  std::array<Tensor, 3> per_branch;  // [C,4,4], [C,8,8], [C,12,12]
  Tensor weights;                    // [3], sums to one
  Tensor fused;                      // [C,8,8]
  PoolStatus status = PoolStatus::kOk;
};

PooledFeature aggregate(const Tensor& feature, const RoIBox& box, const Params& params,
                        const AggregateOptions& opts = {});

}  // namespace dcnet::cfa
