#include "dcnet/detector.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcnet/ops.hpp"
#include "dcnet/tape.hpp"

namespace dcnet::det {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> softmax_row(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> p(row.size());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) z += (p[i] = std::exp(row[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

// RPN terms shared by both loss variants.
void add_rpn_loss(std::span<const RoIBox> gt, const RpnOutput& rpn, const RpnConfig& cfg,
                  std::vector<Tensor>& terms, LossBreakdown& out) {
  const AnchorAssignment a = assign_anchors(rpn.anchors, gt, cfg);
  std::vector<std::int64_t> cls_idx, reg_idx;
  std::vector<double> cls_tgt, reg_tgt;
  for (std::size_t i = 0; i < a.label.size(); ++i) {
    if (a.label[i] < 0) continue;
    cls_idx.push_back(static_cast<std::int64_t>(i));
    cls_tgt.push_back(static_cast<double>(a.label[i]));
    if (a.label[i] == 1) {
      const auto t = kRpnCoder.encode(rpn.anchors[i], gt[static_cast<std::size_t>(a.matched_gt[i])]);
      for (int j = 0; j < 4; ++j) {
        reg_idx.push_back(static_cast<std::int64_t>(i) * 4 + j);
        reg_tgt.push_back(t[static_cast<std::size_t>(j)]);
      }
    }
  }
  if (!cls_idx.empty()) {
    Tensor l = binary_cross_entropy_with_logits(gather(rpn.objectness, cls_idx), cls_tgt);
    out.rpn_cls = l.item();
    terms.push_back(l);
  }
  if (!reg_idx.empty()) {
    Tensor l = smooth_l1(gather(rpn.deltas, reg_idx),
                         Tensor(Shape{static_cast<std::int64_t>(reg_tgt.size())}, reg_tgt));
    out.rpn_reg = l.item();
    terms.push_back(l);
  }
}

// Cross-entropy over `labels` rows plus smooth-L1 on foreground rows.
void add_roi_loss(const HeadOutput& head, const std::vector<int>& labels, const std::vector<RoIBox>& row_rois,
                  const std::vector<const RoIBox*>& row_gt, int num_classes, std::vector<Tensor>& terms,
                  LossBreakdown& out) {
  Tensor cls = cross_entropy(head.class_logits, labels);
  out.roi_cls = cls.item();
  terms.push_back(cls);
  std::vector<std::int64_t> idx;
  std::vector<double> tgt;
  const std::int64_t width = 4 * static_cast<std::int64_t>(num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == num_classes) continue;
    const auto t = kRoiCoder.encode(row_rois[r], *row_gt[r]);
    for (int j = 0; j < 4; ++j) {
      idx.push_back(static_cast<std::int64_t>(r) * width + 4 * labels[r] + j);
      tgt.push_back(t[static_cast<std::size_t>(j)]);
    }
  }
  if (!idx.empty()) {
    Tensor reg = smooth_l1(gather(head.box_deltas, idx), Tensor(Shape{static_cast<std::int64_t>(tgt.size())}, tgt));
    out.roi_reg = reg.item();
    terms.push_back(reg);
  }
}

Tensor sum_terms(const std::vector<Tensor>& terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

void check_head(const HeadOutput& head, std::size_t rows, int num_classes) {
  if (head.class_logits.rank() != 2 || head.class_logits.dim(0) != static_cast<std::int64_t>(rows) ||
      head.class_logits.dim(1) != num_classes + 1) {
    throw InvalidArgument("detection_loss: class logits must be [" + std::to_string(rows) + "," +
                          std::to_string(num_classes + 1) + "], got " + shape_str(head.class_logits.shape()));
  }
  if (head.box_deltas.rank() != 2 || head.box_deltas.dim(0) != static_cast<std::int64_t>(rows) ||
      head.box_deltas.dim(1) != 4 * num_classes) {
    throw InvalidArgument("detection_loss: box deltas must be [" + std::to_string(rows) + "," +
                          std::to_string(4 * num_classes) + "], got " + shape_str(head.box_deltas.shape()));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (backbone.feature_dim <= 0 || backbone.feature_dim % 8 != 0) {
    throw ConfigError("feature_dim must be a positive multiple of 8, got " + std::to_string(backbone.feature_dim));
  }
  if (backbone.stage_channels.empty()) throw ConfigError("backbone needs at least one downsampling stage");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (use_drd && baseline_reweight) throw ConfigError("use_drd and baseline_reweight are mutually exclusive");
  if (head.hidden < 1) throw ConfigError("head hidden width must be >= 1");
  if (rpn.max_proposals < 1 || rpn.pre_nms_top_k < 1) throw ConfigError("RPN proposal counts must be >= 1");
}

Tensor support_input(const Tensor& image, const Tensor& mask) {
  if (image.rank() != 3 || image.dim(0) != 3) throw InvalidArgument("support_input: image must be [3,S,S]");
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != image.dim(1) || mask.dim(2) != image.dim(2)) {
    throw InvalidArgument("support_input: mask must be [1,S,S] matching the image");
  }
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw InvalidArgument("support_input: mask must be binary");
  }
  return concat({image, mask}, 0);
}

Tensor query_input(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw InvalidArgument("query_input: image must be [3,H,W]");
  return concat({image, Tensor::zeros(Shape{1, image.dim(1), image.dim(2)})}, 0);
}

std::vector<RoIBox> make_anchors(std::int64_t feat_h, std::int64_t feat_w, int stride, double anchor_scale) {
  std::vector<RoIBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h * feat_w));
  const double half = 0.5 * anchor_scale * stride;
  for (std::int64_t y = 0; y < feat_h; ++y) {
    for (std::int64_t x = 0; x < feat_w; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) * stride;
      const double cy = (static_cast<double>(y) + 0.5) * stride;
      RoIBox b;
      b.x1 = cx - half;
      b.y1 = cy - half;
      b.x2 = cx + half;
      b.y2 = cy + half;
      anchors.push_back(b);
    }
  }
  return anchors;
}

std::vector<Detection> nms(std::span<const Detection> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (const auto& k : kept) {
      if (iou(k.box, boxes[i].box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(boxes[i]);
  }
  return kept;
}

std::vector<Tensor> reweight_baseline(const Tensor& roi_feature, std::span<const Tensor> class_vectors) {
  std::vector<Tensor> out;
  out.reserve(class_vectors.size());
  for (const auto& w : class_vectors) out.push_back(channel_scale(roi_feature, w));
  return out;
}

AnchorAssignment assign_anchors(std::span<const RoIBox> anchors, std::span<const RoIBox> gt, const RpnConfig& cfg) {
  AnchorAssignment a;
  a.label.assign(anchors.size(), -1);
  a.matched_gt.assign(anchors.size(), -1);
  std::vector<double> best_for_gt(gt.size(), 0.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[i], gt[g]);
      if (v > best) {
        best = v;
        a.matched_gt[i] = static_cast<int>(g);
      }
      best_for_gt[g] = std::max(best_for_gt[g], v);
    }
    if (best >= cfg.positive_iou) {
      a.label[i] = 1;
    } else if (best <= cfg.negative_iou) {
      a.label[i] = 0;
    }
  }
  // Each ground truth also claims its best-overlapping anchor(s).
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (best_for_gt[g] <= 0.0) continue;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (iou(anchors[i], gt[g]) == best_for_gt[g]) {
        a.label[i] = 1;
        a.matched_gt[i] = static_cast<int>(g);
      }
    }
  }
  return a;
}

RoiAssignment assign_rois(std::span<const RoIBox> rois, std::span<const RoIBox> gt, int num_classes,
                          double foreground_iou) {
  RoiAssignment a;
  a.label.assign(rois.size(), num_classes);
  a.matched_gt.assign(rois.size(), -1);
  for (const auto& g : gt) {
    if (!g.class_id || *g.class_id < 0 || *g.class_id >= num_classes) {
      throw InvalidArgument("ground-truth box needs a class_id in [0," + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t r = 0; r < rois.size(); ++r) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(rois[r], gt[g]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0 && best >= foreground_iou) {
      a.label[r] = *gt[static_cast<std::size_t>(arg)].class_id;
      a.matched_gt[r] = arg;
    }
  }
  return a;
}

LossBreakdown detection_loss(std::span<const RoIBox> rois, std::span<const RoIBox> gt, const HeadOutput& head,
                             const RpnOutput& rpn, const LossConfig& cfg) {
  if (gt.empty()) throw InvalidArgument("detection_loss: query image has no ground-truth boxes");
  check_head(head, rois.size(), cfg.num_classes);
  LossBreakdown out;
  std::vector<Tensor> terms;
  add_rpn_loss(gt, rpn, cfg.rpn, terms, out);

  const RoiAssignment a = assign_rois(rois, gt, cfg.num_classes, cfg.foreground_iou);
  std::vector<RoIBox> row_rois(rois.begin(), rois.end());
  std::vector<const RoIBox*> row_gt(rois.size(), nullptr);
  for (std::size_t r = 0; r < rois.size(); ++r)
    if (a.matched_gt[r] >= 0) row_gt[r] = &gt[static_cast<std::size_t>(a.matched_gt[r])];
  add_roi_loss(head, a.label, row_rois, row_gt, cfg.num_classes, terms, out);
  out.total = sum_terms(terms);
  return out;
}

LossBreakdown baseline_detection_loss(std::span<const RoIBox> rois, std::span<const RoIBox> gt,
                                      std::span<const int> class_ids, const HeadOutput& head,
                                      const RpnOutput& rpn, const LossConfig& cfg) {
  if (gt.empty()) throw InvalidArgument("detection_loss: query image has no ground-truth boxes");
  if (class_ids.empty()) throw InvalidArgument("baseline_detection_loss: empty class list");
  const std::size_t r_count = rois.size();
  check_head(head, r_count * class_ids.size(), cfg.num_classes);
  LossBreakdown out;
  std::vector<Tensor> terms;
  add_rpn_loss(gt, rpn, cfg.rpn, terms, out);

  const RoiAssignment a = assign_rois(rois, gt, cfg.num_classes, cfg.foreground_iou);
  std::vector<int> labels;
  std::vector<RoIBox> row_rois;
  std::vector<const RoIBox*> row_gt;
  for (int cls : class_ids) {
    for (std::size_t r = 0; r < r_count; ++r) {
      const bool fg = a.label[r] == cls;
      labels.push_back(fg ? cls : cfg.num_classes);
      row_rois.push_back(rois[r]);
      row_gt.push_back(fg ? &gt[static_cast<std::size_t>(a.matched_gt[r])] : nullptr);
    }
  }
  add_roi_loss(head, labels, row_rois, row_gt, cfg.num_classes, terms, out);
  out.total = sum_terms(terms);
  return out;
}

Tensor channel_blocked_linear(const Tensor& z, const Tensor& weight, std::int64_t channels) {
  if (z.rank() != 2 || weight.rank() != 2 || z.dim(1) != weight.dim(1) || channels < 1 ||
      z.dim(1) % channels != 0) {
    throw InvalidArgument("channel_blocked_linear: incompatible shapes " + shape_str(z.shape()) + " and " +
                          shape_str(weight.shape()));
  }
  const std::int64_t rows = z.dim(0), width = z.dim(1), outs = weight.dim(0), s = width / channels;
  std::vector<double> out(static_cast<std::size_t>(channels * rows * outs));
  for (std::int64_t c = 0; c < channels; ++c) {
    CStridedMap zc(z.data().data() + c * s, rows, s, Eigen::OuterStride<>(width));
    CStridedMap wc(weight.data().data() + c * s, outs, s, Eigen::OuterStride<>(width));
    Eigen::Map<RowMat>(out.data() + c * rows * outs, rows, outs).noalias() = zc * wc.transpose();
  }
  return make_op("channel_blocked_linear", Shape{channels, rows * outs}, std::move(out), {z, weight},
                 [z, weight, channels, rows, width, outs, s](BackwardContext& ctx) {
                   auto g = ctx.grad_output();
                   for (std::int64_t c = 0; c < channels; ++c) {
                     Eigen::Map<const RowMat> gc(g.data() + c * rows * outs, rows, outs);
                     if (ctx.needs(0)) {
                       CStridedMap wc(weight.data().data() + c * s, outs, s, Eigen::OuterStride<>(width));
                       StridedMap gz(ctx.grad_input(0).data() + c * s, rows, s, Eigen::OuterStride<>(width));
                       gz.noalias() += gc * wc;
                     }
                     if (ctx.needs(1)) {
                       CStridedMap zc(z.data().data() + c * s, rows, s, Eigen::OuterStride<>(width));
                       StridedMap gw(ctx.grad_input(1).data() + c * s, outs, s, Eigen::OuterStride<>(width));
                       gw.noalias() += gc.transpose() * zc;
                     }
                   }
                 });
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& bb = config_.backbone;
  const std::int64_t c = bb.feature_dim;

  std::int64_t in = bb.in_channels;
  std::vector<std::int64_t> outs(bb.stage_channels.begin(), bb.stage_channels.end());
  outs.push_back(c);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const std::string n = "backbone.conv" + std::to_string(i + 1);
    drd::ConvParams p;
    p.weight = store_.add_he(n + ".weight", Shape{outs[i], in, 3, 3}, rng);
    p.bias = store_.add_zeros(n + ".bias", Shape{outs[i]});
    backbone_.push_back(p);
    in = outs[i];
  }
  if (config_.use_drd) drd_ = drd::make_params(store_, "drd.", bb.feature_dim, rng);
  rpn_objectness_.weight = store_.add_he("rpn.objectness.weight", Shape{1, c, 1, 1}, rng);
  rpn_objectness_.bias = store_.add_zeros("rpn.objectness.bias", Shape{1});
  rpn_deltas_.weight = store_.add_he("rpn.deltas.weight", Shape{4, c, 1, 1}, rng);
  rpn_deltas_.bias = store_.add_zeros("rpn.deltas.bias", Shape{4});
  if (config_.use_cfa && config_.cfa_attention) cfa_ = cfa::make_params(store_, "cfa.", bb.feature_dim, rng);

  const std::int64_t flat = c * cfa::kFusedResolution * cfa::kFusedResolution;
  const std::int64_t k = config_.num_classes;
  fc1_w_ = store_.add_he("head.fc1.weight", Shape{config_.head.hidden, flat}, rng);
  fc1_b_ = store_.add_zeros("head.fc1.bias", Shape{config_.head.hidden});
  cls_w_ = store_.add_he("head.cls.weight", Shape{k + 1, config_.head.hidden}, rng);
  cls_b_ = store_.add_zeros("head.cls.bias", Shape{k + 1});
  box_w_ = store_.add_he("head.box.weight", Shape{4 * k, config_.head.hidden}, rng);
  box_b_ = store_.add_zeros("head.box.bias", Shape{4 * k});
}

void Model::reset_classifier(Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(cls_w_.dim(1))));
  for (double& v : cls_w_.mutable_data()) v = dist(rng);
  auto b = cls_b_.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
  for (const char* name : {"head.cls.weight", "head.cls.bias"}) store_.at(name).momentum_buffer.clear();
}

Tensor Model::backbone(const Tensor& image4) const {
  const auto& bb = config_.backbone;
  if (image4.rank() != 3 || image4.dim(0) != bb.in_channels) {
    throw InvalidArgument("backbone: expected [" + std::to_string(bb.in_channels) + ",H,W], got " +
                          shape_str(image4.shape()));
  }
  const int stride = bb.stride();
  if (bb.strict && (image4.dim(1) % stride != 0 || image4.dim(2) % stride != 0)) {
    throw InvalidArgument("backbone: image sides " + std::to_string(image4.dim(1)) + "x" +
                          std::to_string(image4.dim(2)) + " must be divisible by stride " + std::to_string(stride));
  }
  Tensor x = image4;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    const bool last = i + 1 == backbone_.size();
    x = relu(conv2d(x, backbone_[i].weight, backbone_[i].bias, Conv2dOptions{last ? 1 : 2, 1, false}));
  }
  return x;
}

SupportSet Model::embed_supports(std::span<const Tensor> support_inputs, std::span<const int> class_ids) const {
  if (support_inputs.size() != class_ids.size()) {
    throw InvalidArgument("embed_supports: one class id per support input required");
  }
  SupportSet s;
  s.class_ids.assign(class_ids.begin(), class_ids.end());
  for (const auto& img : support_inputs) s.features.push_back(backbone(img));
  return s;
}

Tensor Model::refine(const Tensor& query_feature, const SupportSet& supports,
                     std::vector<drd::AttentionWeights>* attention) const {
  if (!config_.use_drd) return query_feature;
  drd::KeyValueMaps q = drd::encode_query(query_feature, drd_.query);
  drd::SupportKV s = drd::encode_support(supports.features, drd_.support);
  drd::DistillResult r = drd::distill_with_attention(q, s, drd_.phi, drd_.phi_prime);
  if (attention) *attention = std::move(r.attention);
  return r.refined;
}

RpnOutput Model::rpn_forward(const Tensor& feature) const {
  RpnOutput out;
  const std::int64_t h = feature.dim(1), w = feature.dim(2), a = h * w;
  out.anchors = make_anchors(h, w, config_.backbone.stride(), config_.rpn.anchor_scale);
  out.objectness = reshape(conv2d(feature, rpn_objectness_.weight, rpn_objectness_.bias), Shape{a});
  out.deltas = transpose(reshape(conv2d(feature, rpn_deltas_.weight, rpn_deltas_.bias), Shape{4, a}));
  return out;
}

std::vector<Proposal> Model::propose(const RpnOutput& rpn, double image_w, double image_h) const {
  const auto& cfg = config_.rpn;
  auto logits = rpn.objectness.data();
  auto deltas = rpn.deltas.data();
  std::vector<Detection> cand;
  cand.reserve(rpn.anchors.size());
  for (std::size_t i = 0; i < rpn.anchors.size(); ++i) {
    const std::array<double, 4> d{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]};
    Detection det;
    det.box = clip_box(kRpnCoder.decode(rpn.anchors[i], d), image_w, image_h);
    det.score = sigmoid(logits[i]);
    cand.push_back(det);
  }
  std::vector<std::size_t> order(cand.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cand[a].score > cand[b].score; });
  order.resize(std::min(order.size(), static_cast<std::size_t>(cfg.pre_nms_top_k)));
  std::vector<Detection> top;
  for (std::size_t i : order) top.push_back(cand[i]);
  std::vector<Detection> kept = nms(top, cfg.nms_iou);
  if (kept.size() > static_cast<std::size_t>(cfg.max_proposals)) kept.resize(static_cast<std::size_t>(cfg.max_proposals));
  std::vector<Proposal> out;
  for (const auto& d : kept) out.push_back(Proposal{d.box, d.score});
  return out;
}

Tensor Model::pool_roi(const Tensor& feature, const RoIBox& box, Tensor* branch_weights) const {
  const double scale = 1.0 / config_.backbone.stride();
  if (!config_.use_cfa) return cfa::roi_align(feature, box, cfa::kFusedResolution, scale).pooled;
  cfa::PooledFeature p = cfa::aggregate(feature, box, cfa_, cfa::AggregateOptions{scale, 2, config_.cfa_attention});
  if (branch_weights) *branch_weights = p.weights;
  return p.fused;
}

HeadOutput Model::roi_head(std::span<const Tensor> fused) const {
  if (fused.empty()) throw InvalidArgument("roi_head: no RoI features");
  std::vector<Tensor> rows;
  rows.reserve(fused.size());
  for (const auto& f : fused) rows.push_back(reshape(f, Shape{1, f.numel()}));
  Tensor h = relu(linear(concat(rows, 0), fc1_w_, fc1_b_));
  return {linear(h, cls_w_, cls_b_), linear(h, box_w_, box_b_)};
}

HeadOutput Model::baseline_head(std::span<const Tensor> fused, const SupportSet& supports) const {
  if (fused.empty()) throw InvalidArgument("baseline_head: no RoI features");
  if (supports.features.empty()) throw InvalidArgument("baseline_head: empty support set");
  const std::int64_t c = config_.backbone.feature_dim;
  const auto r = static_cast<std::int64_t>(fused.size());
  const auto n = static_cast<std::int64_t>(supports.features.size());
  const std::int64_t hidden = config_.head.hidden;
  std::vector<Tensor> rows, vecs;
  for (const auto& f : fused) rows.push_back(reshape(f, Shape{1, f.numel()}));
  for (const auto& s : supports.features) vecs.push_back(reshape(global_avg_pool(s), Shape{1, c}));
  Tensor partial = channel_blocked_linear(concat(rows, 0), fc1_w_, c);  // [C, R*O]
  Tensor mixed = matmul(concat(vecs, 0), partial);                      // [N, R*O]
  Tensor h = relu(add_row_bias(reshape(mixed, Shape{n * r, hidden}), fc1_b_));
  return {linear(h, cls_w_, cls_b_), linear(h, box_w_, box_b_)};
}

ForwardTrace Model::forward(const Tensor& query_image, const SupportSet& supports, std::span<const RoIBox> gt,
                            const std::vector<RoIBox>* fixed_rois) const {
  ForwardTrace t;
  Tensor feat = backbone(query_input(query_image));
  t.feature = refine(feat, supports, &t.attention);
  t.rpn = rpn_forward(t.feature);
  if (fixed_rois) {
    t.rois = *fixed_rois;
  } else {
    t.proposals = propose(t.rpn, static_cast<double>(query_image.dim(2)), static_cast<double>(query_image.dim(1)));
    for (const auto& p : t.proposals) t.rois.push_back(p.box);
    t.rois.insert(t.rois.end(), gt.begin(), gt.end());
  }
  std::vector<Tensor> pooled;
  pooled.reserve(t.rois.size());
  for (const auto& box : t.rois) {
    Tensor w;
    pooled.push_back(pool_roi(t.feature, box, &w));
    if (w.defined()) t.branch_weights.push_back(w);
  }
  t.head = config_.baseline_reweight ? baseline_head(pooled, supports) : roi_head(pooled);
  return t;
}

LossBreakdown Model::loss(const ForwardTrace& trace, std::span<const RoIBox> gt, const SupportSet& supports) const {
  LossConfig cfg{config_.num_classes, config_.rpn, config_.head.foreground_iou};
  if (config_.baseline_reweight) {
    return baseline_detection_loss(trace.rois, gt, supports.class_ids, trace.head, trace.rpn, cfg);
  }
  return detection_loss(trace.rois, gt, trace.head, trace.rpn, cfg);
}

std::vector<Detection> Model::detect(const Tensor& query_image, const SupportSet& supports) const {
  NoGradScope no_grad;
  const ForwardTrace t = forward(query_image, supports, {});
  const auto& hc = config_.head;
  const int k = config_.num_classes;
  const double iw = static_cast<double>(query_image.dim(2)), ih = static_cast<double>(query_image.dim(1));
  const std::size_t r_count = t.rois.size();
  auto logits = t.head.class_logits.data();
  auto deltas = t.head.box_deltas.data();

  std::vector<std::vector<Detection>> per_class(static_cast<std::size_t>(k));
  auto emit = [&](std::size_t row, std::size_t roi, int cls, double score) {
    if (score < hc.score_threshold) return;
    const std::size_t base = row * 4 * static_cast<std::size_t>(k) + 4 * static_cast<std::size_t>(cls);
    const std::array<double, 4> d{deltas[base], deltas[base + 1], deltas[base + 2], deltas[base + 3]};
    Detection det;
    det.box = clip_box(kRoiCoder.decode(t.rois[roi], d), iw, ih);
    det.box.class_id = cls;
    det.box.score = score;
    det.class_id = cls;
    det.score = score;
    per_class[static_cast<std::size_t>(cls)].push_back(det);
  };
  const std::size_t width = static_cast<std::size_t>(k) + 1;
  if (config_.baseline_reweight) {
    for (std::size_t n = 0; n < supports.class_ids.size(); ++n) {
      const int cls = supports.class_ids[n];
      for (std::size_t r = 0; r < r_count; ++r) {
        const std::size_t row = n * r_count + r;
        const auto p = softmax_row(logits.subspan(row * width, width));
        emit(row, r, cls, p[static_cast<std::size_t>(cls)]);
      }
    }
  } else {
    for (std::size_t r = 0; r < r_count; ++r) {
      const auto p = softmax_row(logits.subspan(r * width, width));
      for (int cls : supports.class_ids) emit(r, r, cls, p[static_cast<std::size_t>(cls)]);
    }
  }
  std::vector<Detection> all;
  for (auto& v : per_class) {
    auto kept = nms(v, hc.nms_iou);
    all.insert(all.end(), kept.begin(), kept.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (all.size() > static_cast<std::size_t>(hc.max_detections)) all.resize(static_cast<std::size_t>(hc.max_detections));
  return all;
}

}  // namespace dcnet::det
