#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcnet/boxes.hpp"
#include "dcnet/cfa.hpp"
#include "dcnet/drd.hpp"
#include "dcnet/parameters.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet::det {

struct BackboneConfig {
  int in_channels = 4;                      // RGB + mask channel
  std::vector<int> stage_channels{16, 32, 64};  // one stride-2 block each
  int feature_dim = 64;                     // C; final stride-1 block
  bool strict = true;                       // image sides must divide the stride

  int stride() const { return 1 << stage_channels.size(); }
};

struct RpnConfig {
  double anchor_scale = 1.5;  // anchor side in units of the backbone stride
  int pre_nms_top_k = 64;
  double nms_iou = 0.7;
  int max_proposals = 32;
  double positive_iou = 0.7;
  double negative_iou = 0.3;
};

struct HeadConfig {
  int hidden = 1024;
  double foreground_iou = 0.5;
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 100;
};

struct ModelConfig {
  BackboneConfig backbone;
  RpnConfig rpn;
  HeadConfig head;
  int num_classes = 12;
  bool use_drd = true;
  bool use_cfa = true;
  bool cfa_attention = true;
  bool baseline_reweight = false;  // channel-wise class-vector reweighting instead of DRD

  void validate() const;  // throws ConfigError
};

struct Proposal {
  RoIBox box;
  double objectness = 0.0;
};

struct Detection {
  RoIBox box;
  int class_id = 0;
  double score = 0.0;
};

struct RpnOutput {
  std::vector<RoIBox> anchors;  // row-major over feature cells
  Tensor objectness;            // [A] logits
  Tensor deltas;                // [A,4]
};

struct HeadOutput {
  Tensor class_logits;  // [R, K+1]; baseline: [N*R, K+1] with row n*R + r
  Tensor box_deltas;    // [R, 4K];  baseline: [N*R, 4K]
};

struct LossBreakdown {
  Tensor total;
  double rpn_cls = 0.0, rpn_reg = 0.0, roi_cls = 0.0, roi_reg = 0.0;
};

// Backbone features of the support images for each class of the episode,
// in class order. Several features per class are averaged by the caller.
struct SupportSet {
  std::vector<int> class_ids;
  std::vector<Tensor> features;  // [C, Hs, Ws] each
};

// Mask appended as a fourth channel; mask values must be 0 or 1.
Tensor support_input(const Tensor& image, const Tensor& mask);
// Query images carry a zero fourth channel so one backbone serves both paths.
Tensor query_input(const Tensor& image);

std::vector<RoIBox> make_anchors(std::int64_t feat_h, std::int64_t feat_w, int stride, double anchor_scale);

// Greedy descending-score suppression; ties keep the lower index first.
std::vector<Detection> nms(std::span<const Detection> boxes, double iou_threshold);

// Channel-wise product z (x) w_i for every class vector.
std::vector<Tensor> reweight_baseline(const Tensor& roi_feature, std::span<const Tensor> class_vectors);

// Anchor labels: 1 positive, 0 negative, -1 ignored, plus the matched gt index.
struct AnchorAssignment {
  std::vector<int> label;
  std::vector<int> matched_gt;
};
AnchorAssignment assign_anchors(std::span<const RoIBox> anchors, std::span<const RoIBox> gt, const RpnConfig& cfg);

// RoI labels in [0, K] (K is background) and matched gt index (-1 for background).
struct RoiAssignment {
  std::vector<int> label;
  std::vector<int> matched_gt;
};
RoiAssignment assign_rois(std::span<const RoIBox> rois, std::span<const RoIBox> gt, int num_classes,
                          double foreground_iou);

inline const BoxCoder kRpnCoder{{1.0, 1.0, 1.0, 1.0}};
inline const BoxCoder kRoiCoder{{10.0, 10.0, 5.0, 5.0}};

struct LossConfig {
  int num_classes = 12;
  RpnConfig rpn;
  double foreground_iou = 0.5;
};

// RPN binary cross-entropy + smooth-L1 on positive anchors, plus RoI
// cross-entropy (background = num_classes) + smooth-L1 on foreground RoIs,
// with unit weights. gt boxes carry class_id.
LossBreakdown detection_loss(std::span<const RoIBox> rois, std::span<const RoIBox> gt, const HeadOutput& head,
                             const RpnOutput& rpn, const LossConfig& cfg);

// Same, for the class-specific head of the reweighting baseline: row n*R + r
// is labelled with the RoI's class if it equals class_ids[n], else background.
LossBreakdown baseline_detection_loss(std::span<const RoIBox> rois, std::span<const RoIBox> gt,
                                      std::span<const int> class_ids, const HeadOutput& head,
                                      const RpnOutput& rpn, const LossConfig& cfg);

struct ForwardTrace {
  Tensor feature;  // refined query feature fed to the RPN and RoI pooling
  RpnOutput rpn;
  std::vector<Proposal> proposals;
  std::vector<RoIBox> rois;
  HeadOutput head;
  std::vector<drd::AttentionWeights> attention;
  std::vector<Tensor> branch_weights;  // per RoI, when CFA is on
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  // [4,H,W] -> [C,H/stride,W/stride]
  Tensor backbone(const Tensor& image4) const;
  SupportSet embed_supports(std::span<const Tensor> support_inputs, std::span<const int> class_ids) const;

  // DRD refinement when enabled; otherwise the feature is returned unchanged.
  Tensor refine(const Tensor& query_feature, const SupportSet& supports,
                std::vector<drd::AttentionWeights>* attention = nullptr) const;

  RpnOutput rpn_forward(const Tensor& feature) const;
  std::vector<Proposal> propose(const RpnOutput& rpn, double image_w, double image_h) const;

  // Pooled RoI feature [C,8,8]: CFA fusion, or single-resolution RoI Align.
  Tensor pool_roi(const Tensor& feature, const RoIBox& box, Tensor* branch_weights = nullptr) const;

  // flatten -> fc(hidden) -> relu -> (class logits, class-specific deltas)
  HeadOutput roi_head(std::span<const Tensor> fused) const;
  // Reweighting baseline head over all (class, RoI) pairs.
  HeadOutput baseline_head(std::span<const Tensor> fused, const SupportSet& supports) const;

  // Full forward. Proposals are computed from the RPN unless `fixed_rois` is
  // given; ground truth boxes are appended to the RoIs during training.
  ForwardTrace forward(const Tensor& query_image, const SupportSet& supports, std::span<const RoIBox> gt,
                       const std::vector<RoIBox>* fixed_rois = nullptr) const;

  LossBreakdown loss(const ForwardTrace& trace, std::span<const RoIBox> gt, const SupportSet& supports) const;

  std::vector<Detection> detect(const Tensor& query_image, const SupportSet& supports) const;

  // Re-initializes the classification layer (meta fine-tuning).
  void reset_classifier(Rng& rng);

 private:
  ModelConfig config_;
  ParameterStore store_;
  std::vector<drd::ConvParams> backbone_;
  drd::Params drd_;
  drd::ConvParams rpn_objectness_, rpn_deltas_;
  cfa::Params cfa_;
  Tensor fc1_w_, fc1_b_, cls_w_, cls_b_, box_w_, box_b_;
};

// [R, C*S] x [O, C*S] -> [C, R*O] with out[c, r*O + o] = sum_s W[o, c*S+s] Z[r, c*S+s].
// Lets the baseline apply fc1 to every channel-reweighted copy of a RoI with
// one pass over the weights.
Tensor channel_blocked_linear(const Tensor& z, const Tensor& weight, std::int64_t channels);

}  // namespace dcnet::det
