#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcnet/boxes.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/drd.hpp"
#include "dcnet/evaluation.hpp"
#include "dcnet/tensor.hpp"

// Straight-line reference implementations. Nothing here calls into the
// library's ops; tensors are only used as containers.
namespace dcnet::reference {

// Direct convolution, zero padding. input [Ci,H,W], weight [Co,Ci,k,k].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

Tensor matmul(const Tensor& a, const Tensor& b);

// Per-pixel loop over every (query location, class, support location).
Tensor distill(const Tensor& query_feature, std::span<const Tensor> support_features, const drd::Params& params);

// Attention rows of class n for the given features, [HqWq, HsWs].
Tensor attention(const Tensor& query_feature, const Tensor& support_feature, const drd::Params& params);

// Aligned RoI Align with bilinear sampling evaluated pointwise.
Tensor roi_align(const Tensor& feature, const RoIBox& box, int resolution, double spatial_scale, int sampling_ratio);

Tensor resize_bilinear(const Tensor& map, int target);

double iou(const RoIBox& a, const RoIBox& b);

// Repeatedly take the best remaining box and drop everything overlapping it.
std::vector<det::Detection> nms(std::vector<det::Detection> boxes, double iou_threshold);

// Decode, clip, score, top-k, NMS, truncate.
std::vector<RoIBox> proposals(std::span<const RoIBox> anchors, std::span<const double> logits,
                              std::span<const double> deltas, const det::RpnConfig& cfg, double image_w,
                              double image_h);

// All-point AP evaluated in exact rational arithmetic, then rounded.
std::optional<double> average_precision(std::span<const eval::ImageResult> images, int class_id,
                                        double iou_threshold = 0.5);

}  // namespace dcnet::reference
