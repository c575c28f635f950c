#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcnet/tape.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet {

// Builds an op result and records it on the active tape when any input
// requires a gradient. Building block for every differentiable op, and for
// custom ops outside this library.
Tensor make_op(std::string name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  bool strict = false;  // reject sizes that do not tile exactly
};

// input [C_in,H,W], weight [C_out,C_in,kh,kw], bias [C_out] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions opts = {});

// Affine map over the trailing dimension: input [..., D_in] -> [..., D_out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax(const Tensor& input, int axis);
Tensor relu(const Tensor& input);
Tensor global_avg_pool(const Tensor& input);  // [C,H,W] -> [C]
Tensor concat(const std::vector<Tensor>& tensors, int axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a * s where s is a one-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
// x [n,D] plus b [D] added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& b);
// [C,...] scaled per leading channel by w [C].
Tensor channel_scale(const Tensor& a, const Tensor& w);

Tensor sum(const Tensor& input, int axis);
Tensor sum(const Tensor& input);  // all elements -> [1]
Tensor mean(const Tensor& input);

// Flat gather: out[i] = input.flat[indices[i]].
Tensor gather(const Tensor& input, std::span<const std::int64_t> indices);

// Mean-reduced multiclass cross-entropy; logits [n,K], labels in [0,K).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean-reduced binary cross-entropy on logits; targets in {0,1}.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets);
// Mean-reduced smooth-L1 with transition point `beta`.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta = 1.0);

// Sparse linear resampling of a [C,H,W] map. Every output location is a
// weighted sum of input locations, shared across channels. Used by RoI Align
// and bilinear resizing.
struct SamplingPlan {
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  // CSR layout over output locations (row-major out_h x out_w).
  std::vector<std::int64_t> offsets;  // size out_h*out_w + 1
  std::vector<std::int64_t> source;   // flat input location index (y*W + x)
  std::vector<double> weight;
};
Tensor resample(const Tensor& input, const SamplingPlan& plan);

}  // namespace dcnet
