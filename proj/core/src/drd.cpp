#include "dcnet/drd.hpp"

#include "dcnet/ops.hpp"

namespace dcnet::drd {

namespace {

void check_feature_dim(std::int64_t c) {
  if (c <= 0 || c % 8 != 0) {
    throw ConfigError("feature dimension C must be a positive multiple of 8, got " + std::to_string(c));
  }
}

KeyValueMaps encode(const Tensor& feat, const EncoderParams& p) {
  if (feat.rank() != 3) throw InvalidArgument("drd encoder expects [C,H,W], got " + shape_str(feat.shape()));
  check_feature_dim(feat.dim(0));
  const std::int64_t c = feat.dim(0);
  if (p.key.weight.dim(0) != c / 8 || p.value.weight.dim(0) != c / 2) {
    throw ConfigError("drd encoder widths must be C/8 and C/2 for C=" + std::to_string(c));
  }
  Conv2dOptions same{1, 1, false};
  return {conv2d(feat, p.key.weight, p.key.bias, same), conv2d(feat, p.value.weight, p.value.bias, same)};
}

Tensor project(const Tensor& key, const ProjectionParams& p) {
  // [C8,H,W] -> [C8', H*W]
  Tensor k = conv2d(key, p.weight, Tensor{}, Conv2dOptions{});
  return reshape(k, Shape{k.dim(0), k.dim(1) * k.dim(2)});
}

}  // namespace

Params make_params(ParameterStore& store, const std::string& prefix, int feature_dim, Rng& rng) {
  check_feature_dim(feature_dim);
  const std::int64_t c = feature_dim, ck = c / 8, cv = c / 2;
  auto encoder = [&](const std::string& name) {
    EncoderParams e;
    e.key.weight = store.add_he(prefix + name + ".key.weight", Shape{ck, c, 3, 3}, rng);
    e.key.bias = store.add_zeros(prefix + name + ".key.bias", Shape{ck});
    e.value.weight = store.add_he(prefix + name + ".value.weight", Shape{cv, c, 3, 3}, rng);
    e.value.bias = store.add_zeros(prefix + name + ".value.bias", Shape{cv});
    return e;
  };
  Params p;
  p.query = encoder("query_encoder");
  p.support = encoder("support_encoder");
  p.phi.weight = store.add_he(prefix + "phi.weight", Shape{ck, ck, 1, 1}, rng);
  p.phi_prime.weight = store.add_he(prefix + "phi_prime.weight", Shape{ck, ck, 1, 1}, rng);
  return p;
}

KeyValueMaps encode_query(const Tensor& feat, const EncoderParams& params) { return encode(feat, params); }

SupportKV encode_support(std::span<const Tensor> feats, const EncoderParams& params) {
  if (feats.empty()) throw InvalidArgument("encode_support: empty support list");
  SupportKV out;
  for (const auto& f : feats) {
    if (f.shape() != feats.front().shape()) {
      throw InvalidArgument("encode_support: support features differ in shape (" + shape_str(f.shape()) +
                            " vs " + shape_str(feats.front().shape()) + ")");
    }
    out.per_class.push_back(encode(f, params));
  }
  return out;
}

Tensor similarity(const Tensor& key_query, const Tensor& key_support, const ProjectionParams& phi,
                  const ProjectionParams& phi_prime) {
  if (key_query.rank() != 3 || key_support.rank() != 3) throw InvalidArgument("similarity: keys must be [C,H,W]");
  if (key_query.dim(0) != key_support.dim(0)) {
    throw InvalidArgument("similarity: key channel mismatch (" + std::to_string(key_query.dim(0)) + " vs " +
                          std::to_string(key_support.dim(0)) + ")");
  }
  return matmul(transpose(project(key_query, phi)), project(key_support, phi_prime));
}

AttentionWeights attend(const Tensor& sim) {
  if (sim.rank() != 2) throw InvalidArgument("attend: similarity must be 2-D");
  return {softmax(sim, 1)};
}

DistillResult distill_with_attention(const KeyValueMaps& query, const SupportKV& support,
                                     const ProjectionParams& phi, const ProjectionParams& phi_prime) {
  if (support.per_class.empty()) throw InvalidArgument("distill: support set is empty");
  const std::int64_t cv = query.value.dim(0), hq = query.value.dim(1), wq = query.value.dim(2);
  const std::int64_t ck = query.key.dim(0);
  if (query.key.dim(1) != hq || query.key.dim(2) != wq) {
    throw InvalidArgument("distill: query key and value maps differ in spatial size");
  }
  Tensor q = transpose(project(query.key, phi));  // [HqWq, C8']

  DistillResult result;
  Tensor retrieved;
  for (const auto& kv : support.per_class) {
    if (kv.key.dim(0) != ck || kv.value.dim(0) != cv) {
      throw InvalidArgument("distill: support key/value channels incompatible with query");
    }
    if (kv.key.dim(1) != kv.value.dim(1) || kv.key.dim(2) != kv.value.dim(2)) {
      throw InvalidArgument("distill: support key and value maps differ in spatial size");
    }
    AttentionWeights w = attend(matmul(q, project(kv.key, phi_prime)));
    const std::int64_t hws = kv.value.dim(1) * kv.value.dim(2);
    Tensor v = reshape(kv.value, Shape{cv, hws});
    Tensor r = matmul(v, transpose(w.w));  // [C/2, HqWq]
    retrieved = retrieved.defined() ? add(retrieved, r) : r;
    result.attention.push_back(std::move(w));
  }
  result.refined = concat({query.value, reshape(retrieved, Shape{cv, hq, wq})}, 0);
  return result;
}

}  // namespace dcnet::drd
