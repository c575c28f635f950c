#pragma once

#include <span>
#include <string>
#include <vector>

#include "dcnet/parameters.hpp"
#include "dcnet/tensor.hpp"

// Dense relation distillation: query and support feature maps are encoded
// into key/value maps, every query pixel attends over every support pixel
// of each class, and the retrieved support values (summed over classes) are
// concatenated with the query value map.
namespace dcnet::drd {

struct ConvParams {
  Tensor weight;
  Tensor bias;
};

// Two parallel 3x3 convolutions: C -> C/8 (key) and C -> C/2 (value).
struct EncoderParams {
  ConvParams key;
  ConvParams value;
};

// Per-pixel linear map on keys, stored as a bias-free 1x1 convolution
// weight [C/8, C/8, 1, 1].
struct ProjectionParams {
  Tensor weight;
};

struct Params {
  EncoderParams query;
  EncoderParams support;  // same structure as query, separate parameters
  ProjectionParams phi;
  ProjectionParams phi_prime;
};

Params make_params(ParameterStore& store, const std::string& prefix, int feature_dim, Rng& rng);

struct KeyValueMaps {
  Tensor key;    // [C/8, H, W]
  Tensor value;  // [C/2, H, W]
};

struct SupportKV {
  std::vector<KeyValueMaps> per_class;
};

struct AttentionWeights {
  Tensor w;  // [Hq*Wq, Hs*Ws], rows sum to one
};

KeyValueMaps encode_query(const Tensor& feat, const EncoderParams& params);
SupportKV encode_support(std::span<const Tensor> feats, const EncoderParams& params);

// Entry (i, j) = phi(k_q at i) . phi'(k_s at j).
Tensor similarity(const Tensor& key_query, const Tensor& key_support, const ProjectionParams& phi,
                  const ProjectionParams& phi_prime);

// Softmax over support locations (row-wise).
AttentionWeights attend(const Tensor& sim);

struct DistillResult {
  Tensor refined;                            // [C, Hq, Wq]
  std::vector<AttentionWeights> attention;  // one per support class
};

DistillResult distill_with_attention(const KeyValueMaps& query, const SupportKV& support,
                                     const ProjectionParams& phi, const ProjectionParams& phi_prime);

inline Tensor distill(const KeyValueMaps& query, const SupportKV& support, const ProjectionParams& phi,
                      const ProjectionParams& phi_prime) {
  return distill_with_attention(query, support, phi, phi_prime).refined;
}

}  // namespace dcnet::drd
