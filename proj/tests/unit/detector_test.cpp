#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dcnet/checkpoint.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/ops.hpp"
#include "dcnet/reference/reference.hpp"
#include "dcnet/tape.hpp"
#include "test_util.hpp"

namespace dcnet::det {
namespace {

using testing::box;
using testing::max_abs_diff;
using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {8, 8, 16};
  cfg.backbone.feature_dim = 16;
  cfg.head.hidden = 24;
  cfg.num_classes = 4;
  return cfg;
}

void zero_prefix(Model& m, const std::string& prefix) {
  for (Parameter* p : m.store().with_prefix(prefix))
    for (double& v : p->tensor.mutable_data()) v = 0.0;
}

Tensor binary_mask(std::int64_t s, const std::vector<RoIBox>& boxes) {
  Tensor m = Tensor::zeros({1, s, s});
  auto d = m.mutable_data();
  for (const auto& b : boxes)
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x)
        if (x + 0.5 > b.x1 && x + 0.5 < b.x2 && y + 0.5 > b.y1 && y + 0.5 < b.y2) d[y * s + x] = 1.0;
  return m;
}

Detection det_of(const RoIBox& b, double score) {
  Detection d;
  d.box = b;
  d.score = score;
  return d;
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> pos(0.0, extent), side(2.0, extent / 3.0), sc(0.0, 1.0);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    // Quantized scores make ties common, exercising the index tie-break.
    out.push_back(det_of(box(x, y, x + side(rng), y + side(rng)), std::round(sc(rng) * 8.0) / 8.0));
  }
  return out;
}

bool same_box(const RoIBox& a, const RoIBox& b) { return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2; }

bool near_box(const RoIBox& a, const RoIBox& b, double tol) {
  return std::abs(a.x1 - b.x1) <= tol && std::abs(a.y1 - b.y1) <= tol && std::abs(a.x2 - b.x2) <= tol &&
         std::abs(a.y2 - b.y2) <= tol;
}

TEST(Anchors, OnePerCellCentered) {
  auto a = make_anchors(3, 4, 8, 1.5);
  ASSERT_EQ(a.size(), 12u);
  EXPECT_DOUBLE_EQ(a[0].x1, -2.0);
  EXPECT_DOUBLE_EQ(a[0].x2, 10.0);
  EXPECT_DOUBLE_EQ(a[5].x1 + a[5].x2, 2 * 12.0);  // row 1, col 1
  EXPECT_DOUBLE_EQ(a[5].y1 + a[5].y2, 2 * 12.0);
  for (const auto& b : a) EXPECT_DOUBLE_EQ(b.width(), 12.0);
}

TEST(SupportInput, ZeroMaskAddsZeroChannel) {
  std::mt19937_64 rng(1);
  Tensor img = random_tensor({3, 16, 16}, rng);
  Tensor s = support_input(img, Tensor::zeros({1, 16, 16}));
  ASSERT_EQ(s.shape(), (Shape{4, 16, 16}));
  for (std::int64_t i = 0; i < img.numel(); ++i) EXPECT_EQ(s[i], img[i]);
  for (std::int64_t i = img.numel(); i < s.numel(); ++i) EXPECT_EQ(s[i], 0.0);
}

TEST(SupportInput, MaskAreaAndUnion) {
  Tensor m = binary_mask(64, {box(8, 8, 24, 24)});
  double area = 0;
  for (double v : m.data()) area += v;
  EXPECT_EQ(area, 256.0);
  Tensor u = binary_mask(64, {box(8, 8, 24, 24), box(16, 16, 32, 32)});
  area = 0;
  for (double v : u.data()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    area += v;
  }
  EXPECT_EQ(area, 256.0 + 256.0 - 64.0);
  EXPECT_NO_THROW(support_input(Tensor::zeros({3, 64, 64}), u));
}

TEST(SupportInput, RejectsNonBinaryMask) {
  Tensor m = Tensor::zeros({1, 8, 8});
  m.mutable_data()[3] = 0.5;
  EXPECT_THROW(support_input(Tensor::zeros({3, 8, 8}), m), InvalidArgument);
  EXPECT_THROW(support_input(Tensor::zeros({3, 8, 8}), Tensor::zeros({1, 8, 7})), InvalidArgument);
}

TEST(Backbone, ShapeZeroAndDeterminism) {
  Model m(ModelConfig{}, 3);
  Tensor f = m.backbone(Tensor::zeros({4, 64, 64}));
  EXPECT_EQ(f.shape(), (Shape{64, 8, 8}));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(2);
  Tensor img = random_tensor({4, 64, 64}, rng);
  Model a(ModelConfig{}, 11), b(ModelConfig{}, 11);
  Tensor fa = a.backbone(img), fb = b.backbone(img);
  EXPECT_EQ(max_abs_diff(fa, fb), 0.0);
}

TEST(Backbone, StrictRejectsNonDivisible) {
  Model m(tiny_config(), 1);
  EXPECT_THROW(m.backbone(Tensor::zeros({4, 30, 32})), InvalidArgument);
  EXPECT_THROW(m.backbone(Tensor::zeros({3, 32, 32})), InvalidArgument);
}

TEST(Config, Validation) {
  ModelConfig c;
  c.backbone.feature_dim = 60;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.baseline_reweight = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c.use_drd = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(Rpn, ZeroHeadGivesAnchors) {
  Model m(tiny_config(), 4);
  zero_prefix(m, "rpn.");
  std::mt19937_64 rng(5);
  Tensor f = random_tensor({16, 4, 4}, rng);
  RpnOutput out = m.rpn_forward(f);
  ASSERT_EQ(out.anchors.size(), 16u);
  for (double v : out.objectness.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.deltas.data()) EXPECT_EQ(v, 0.0);
  for (const auto& p : m.propose(out, 32, 32)) {
    EXPECT_DOUBLE_EQ(p.objectness, 0.5);
    bool found = false;
    for (const auto& a : out.anchors) found = found || same_box(clip_box(a, 32, 32), p.box);
    EXPECT_TRUE(found);
  }
}

TEST(Rpn, MaxProposalsOneIsArgmax) {
  ModelConfig cfg = tiny_config();
  cfg.rpn.max_proposals = 1;
  Model m(cfg, 6);
  std::mt19937_64 rng(7);
  RpnOutput out = m.rpn_forward(random_tensor({16, 4, 4}, rng));
  auto props = m.propose(out, 32, 32);
  ASSERT_EQ(props.size(), 1u);
  double best = -INFINITY;
  for (double v : out.objectness.data()) best = std::max(best, v);
  EXPECT_DOUBLE_EQ(props[0].objectness, 1.0 / (1.0 + std::exp(-best)));
}

TEST(Rpn, ProposalsMatchExhaustiveOracle) {
  ModelConfig cfg = tiny_config();
  cfg.rpn.pre_nms_top_k = 20;
  cfg.rpn.max_proposals = 8;
  Model m(cfg, 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    RpnOutput out = m.rpn_forward(random_tensor({16, 6, 6}, rng, 2.0));
    auto props = m.propose(out, 48, 48);
    auto ref = reference::proposals(out.anchors, out.objectness.data(), out.deltas.data(), cfg.rpn, 48, 48);
    ASSERT_EQ(props.size(), ref.size());
    // Separate compilation units may contract multiply-adds differently.
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_TRUE(near_box(props[i].box, ref[i], 1e-9)) << trial << ":" << i;
  }
}

TEST(RoiHead, ZeroParamsUniform) {
  ModelConfig cfg;
  cfg.num_classes = 10;
  cfg.head.hidden = 32;
  Model m(cfg, 10);
  zero_prefix(m, "head.");
  std::mt19937_64 rng(11);
  std::vector<Tensor> fused{random_tensor({64, 8, 8}, rng), random_tensor({64, 8, 8}, rng)};
  HeadOutput h = m.roi_head(fused);
  EXPECT_EQ(h.class_logits.shape(), (Shape{2, 11}));
  EXPECT_EQ(h.box_deltas.shape(), (Shape{2, 40}));
  for (double v : h.class_logits.data()) EXPECT_EQ(v, 0.0);
  for (double v : h.box_deltas.data()) EXPECT_EQ(v, 0.0);
}

TEST(Reweight, ScalingExamples) {
  std::mt19937_64 rng(12);
  Tensor z = random_tensor({8, 8, 8}, rng);
  Tensor two_k = Tensor::zeros({8});
  two_k.mutable_data()[3] = 2.0;
  std::vector<Tensor> vecs{Tensor::full({8}, 1.0), Tensor::zeros({8}), two_k, Tensor::full({8}, 1.0)};
  auto out = reweight_baseline(z, vecs);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(max_abs_diff(out[0], z), 0.0);
  EXPECT_EQ(max_abs_diff(out[0], out[3]), 0.0);
  for (double v : out[1].data()) EXPECT_EQ(v, 0.0);
  for (std::int64_t c = 0; c < 8; ++c)
    for (std::int64_t i = 0; i < 64; ++i) EXPECT_EQ(out[2][c * 64 + i], c == 3 ? 2.0 * z[c * 64 + i] : 0.0);
  std::vector<Tensor> bad{Tensor::full({7}, 1.0)};
  EXPECT_THROW(reweight_baseline(z, bad), InvalidArgument);
}

TEST(Reweight, FastHeadMatchesExplicitReweighting) {
  ModelConfig cfg = tiny_config();
  cfg.use_drd = false;
  cfg.baseline_reweight = true;
  Model m(cfg, 13);
  for (Parameter* p : m.store().with_prefix("head.fc1.bias"))
    for (double& v : p->tensor.mutable_data()) v = 0.1;
  std::mt19937_64 rng(14);
  std::vector<Tensor> fused{random_tensor({16, 8, 8}, rng), random_tensor({16, 8, 8}, rng),
                            random_tensor({16, 8, 8}, rng)};
  SupportSet s;
  s.class_ids = {0, 2};
  s.features = {random_tensor({16, 4, 4}, rng), random_tensor({16, 4, 4}, rng)};
  HeadOutput fast = m.baseline_head(fused, s);

  std::vector<Tensor> explicit_rows;
  for (const auto& f : s.features) {
    Tensor w = global_avg_pool(f);
    for (const auto& z : fused) explicit_rows.push_back(reweight_baseline(z, std::span(&w, 1))[0]);
  }
  HeadOutput slow = m.roi_head(explicit_rows);
  EXPECT_LE(max_abs_diff(fast.class_logits, slow.class_logits), 1e-12);
  EXPECT_LE(max_abs_diff(fast.box_deltas, slow.box_deltas), 1e-12);
}

TEST(Nms, Examples) {
  std::vector<Detection> disjoint{det_of(box(0, 0, 5, 5), 0.3), det_of(box(10, 10, 15, 15), 0.9)};
  auto kept = nms(disjoint, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.9);

  std::vector<Detection> same{det_of(box(1, 1, 9, 9), 0.8), det_of(box(1, 1, 9, 9), 0.9)};
  kept = nms(same, 0.99);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
}

TEST(Nms, TieKeepsLowerIndex) {
  std::vector<Detection> tie{det_of(box(0, 0, 10, 10), 0.5), det_of(box(1, 0, 11, 10), 0.5)};
  auto kept = nms(tie, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box.x1, 0.0);
}

TEST(Nms, MatchesReferenceAndInvariants) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    auto boxes = random_detections(rng, 20, 40.0);
    const double thr = 0.3 + 0.05 * (trial % 8);
    auto kept = nms(boxes, thr);
    auto ref = reference::nms(boxes, thr);
    ASSERT_EQ(kept.size(), ref.size()) << trial;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_TRUE(same_box(kept[i].box, ref[i].box));
      EXPECT_EQ(kept[i].score, ref[i].score);
      if (i > 0) {
        EXPECT_GE(kept[i - 1].score, kept[i].score);
      }
      bool in_input = false;
      for (const auto& b : boxes) in_input = in_input || (same_box(b.box, kept[i].box) && b.score == kept[i].score);
      EXPECT_TRUE(in_input);
      for (std::size_t j = 0; j < i; ++j) EXPECT_LE(iou(kept[i].box, kept[j].box), thr);
    }
  }
}

TEST(Assign, AnchorThresholdsAndBestAnchor) {
  auto anchors = make_anchors(4, 4, 8, 1.5);
  RpnConfig cfg;
  // Matches no anchor at 0.7 but still claims its best anchor.
  std::vector<RoIBox> gt{box(3, 3, 17, 13, 0)};
  auto a = assign_anchors(anchors, gt, cfg);
  int positives = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double v = iou(anchors[i], gt[0]);
    if (a.label[i] == 1) {
      ++positives;
      EXPECT_EQ(a.matched_gt[i], 0);
    } else if (v <= cfg.negative_iou) {
      EXPECT_EQ(a.label[i], 0);
    } else {
      EXPECT_EQ(a.label[i], -1);
    }
  }
  EXPECT_GE(positives, 1);
}

TEST(Assign, RoiLabels) {
  std::vector<RoIBox> gt{box(0, 0, 10, 10, 2), box(20, 20, 30, 30, 1)};
  std::vector<RoIBox> rois{box(0, 0, 10, 10), box(21, 21, 30, 30), box(40, 40, 50, 50), box(0, 0, 10, 25)};
  auto a = assign_rois(rois, gt, 3, 0.5);
  EXPECT_EQ(a.label, (std::vector<int>{2, 1, 3, 3}));
  EXPECT_EQ(a.matched_gt, (std::vector<int>{0, 1, -1, -1}));
  std::vector<RoIBox> unlabeled{box(0, 0, 1, 1)};
  EXPECT_THROW(assign_rois(rois, unlabeled, 3, 0.5), InvalidArgument);
}

struct LossFixture {
  RpnOutput rpn;
  std::vector<RoIBox> gt;
  std::vector<RoIBox> rois;
  HeadOutput head;
  LossConfig cfg;
};

// Predictions that agree with every assignment up to saturation.
LossFixture perfect_fixture() {
  LossFixture f;
  f.cfg.num_classes = 3;
  f.rpn.anchors = make_anchors(4, 4, 8, 1.5);
  f.gt = {box(6, 6, 18, 18, 1), box(18, 14, 29, 27, 2)};
  auto a = assign_anchors(f.rpn.anchors, f.gt, f.cfg.rpn);
  std::vector<double> logits(16, 0.0), deltas(64, 0.0);
  for (std::size_t i = 0; i < 16; ++i) {
    logits[i] = a.label[i] == 1 ? 30.0 : -30.0;
    if (a.label[i] == 1) {
      auto t = kRpnCoder.encode(f.rpn.anchors[i], f.gt[static_cast<std::size_t>(a.matched_gt[i])]);
      for (std::size_t j = 0; j < 4; ++j) deltas[4 * i + j] = t[j];
    }
  }
  f.rpn.objectness = Tensor({16}, logits);
  f.rpn.deltas = Tensor({16, 4}, deltas);
  f.rois = {box(6, 6, 18, 18), box(19, 14, 29, 27), box(0, 20, 4, 30)};
  auto ra = assign_rois(f.rois, f.gt, 3, 0.5);
  std::vector<double> cls(3 * 4, 0.0), bd(3 * 12, 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    cls[r * 4 + static_cast<std::size_t>(ra.label[r])] = 30.0;
    if (ra.matched_gt[r] < 0) continue;
    auto t = kRoiCoder.encode(f.rois[r], f.gt[static_cast<std::size_t>(ra.matched_gt[r])]);
    for (std::size_t j = 0; j < 4; ++j) bd[r * 12 + 4 * static_cast<std::size_t>(ra.label[r]) + j] = t[j];
  }
  f.head = {Tensor({3, 4}, cls), Tensor({3, 12}, bd)};
  return f;
}

TEST(DetectionLoss, PerfectPredictionsNearZero) {
  LossFixture f = perfect_fixture();
  auto l = detection_loss(f.rois, f.gt, f.head, f.rpn, f.cfg);
  EXPECT_LT(l.total.item(), 1e-3);
  EXPECT_GT(l.rpn_reg + l.roi_reg, -1.0);
}

TEST(DetectionLoss, UniformLogitsGiveLogK1) {
  LossFixture f = perfect_fixture();
  f.head.class_logits = Tensor::zeros({3, 4});
  auto l = detection_loss(f.rois, f.gt, f.head, f.rpn, f.cfg);
  EXPECT_NEAR(l.roi_cls, std::log(4.0), 1e-14);
}

TEST(DetectionLoss, DuplicatedBatchUnchanged) {
  std::mt19937_64 rng(16);
  LossFixture f = perfect_fixture();
  f.head = {random_tensor({3, 4}, rng), random_tensor({3, 12}, rng)};
  auto once = detection_loss(f.rois, f.gt, f.head, f.rpn, f.cfg);
  std::vector<RoIBox> rois2 = f.rois;
  rois2.insert(rois2.end(), f.rois.begin(), f.rois.end());
  HeadOutput h2{concat({f.head.class_logits, f.head.class_logits}, 0),
                concat({f.head.box_deltas, f.head.box_deltas}, 0)};
  auto twice = detection_loss(rois2, f.gt, h2, f.rpn, f.cfg);
  EXPECT_NEAR(once.total.item(), twice.total.item(), 1e-12);
}

TEST(DetectionLoss, RejectsMissingGroundTruth) {
  LossFixture f = perfect_fixture();
  EXPECT_THROW(detection_loss(f.rois, {}, f.head, f.rpn, f.cfg), InvalidArgument);
  HeadOutput wrong{Tensor::zeros({2, 4}), Tensor::zeros({2, 12})};
  EXPECT_THROW(detection_loss(f.rois, f.gt, wrong, f.rpn, f.cfg), InvalidArgument);
}

struct Episode {
  Tensor query;
  std::vector<Tensor> supports;
  std::vector<int> classes;
  std::vector<RoIBox> gt;
};

Episode random_episode(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Episode e;
  e.query = random_tensor({3, 32, 32}, rng, 0.5);
  e.gt = {box(4, 5, 17, 19, 1), box(15, 12, 30, 28, 3)};
  e.classes = {1, 3};
  for (int c : e.classes) {
    (void)c;
    e.supports.push_back(support_input(random_tensor({3, 32, 32}, rng, 0.5), binary_mask(32, {box(6, 6, 26, 26)})));
  }
  return e;
}

class EndToEnd : public ::testing::TestWithParam<bool> {};

TEST_P(EndToEnd, EveryParameterGroupGetsGradient) {
  ModelConfig cfg = tiny_config();
  if (GetParam()) {
    cfg.use_drd = false;
    cfg.baseline_reweight = true;
  }
  Model m(cfg, 17);
  Episode e = random_episode(18);
  Tape tape;
  {
    TapeScope scope(tape);
    SupportSet s = m.embed_supports(e.supports, e.classes);
    ForwardTrace t = m.forward(e.query, s, e.gt);
    EXPECT_FALSE(t.rois.empty());
    tape.backward(m.loss(t, e.gt, s).total);
  }
  std::map<std::string, double> norms;
  for (const auto& p : m.store().params()) {
    const std::string group = p.name.substr(0, p.name.find('.', p.name.find('.') + 1));
    for (double g : p.tensor.grad()) norms[group] += g * g;
  }
  std::set<std::string> expected{"backbone.conv1", "backbone.conv4", "rpn.objectness", "rpn.deltas",
                                 "cfa.branch4",    "head.fc1",       "head.cls",       "head.box"};
  if (!GetParam()) expected.insert({"drd.query_encoder", "drd.support_encoder", "drd.phi", "drd.phi_prime"});
  for (const auto& [group, n] : norms) EXPECT_GT(n, 0.0) << group;
  for (const auto& g : expected) EXPECT_TRUE(norms.count(g)) << g;
}

TEST_P(EndToEnd, SpotCheckedParametersMatchFiniteDifferences) {
  ModelConfig cfg = tiny_config();
  if (GetParam()) {
    cfg.use_drd = false;
    cfg.baseline_reweight = true;
  }
  Model m(cfg, 19);
  Episode e = random_episode(20);
  // Fixed RoIs keep the proposal selection out of the perturbation.
  std::vector<RoIBox> rois{box(3, 4, 18, 20), box(14, 11, 31, 29), box(0, 0, 12, 30)};
  std::vector<Tensor> probes;
  for (const auto& p : m.store().params())
    if (p.name.ends_with(".weight") && p.tensor.numel() < 5000) probes.push_back(p.tensor);
  GradCheckOptions opts;
  opts.rel_tol = 1e-3;
  opts.max_probes = 6;
  auto r = gradcheck(
      "end_to_end",
      [&](const std::vector<Tensor>&) {
        SupportSet s = m.embed_supports(e.supports, e.classes);
        ForwardTrace t = m.forward(e.query, s, e.gt, &rois);
        return m.loss(t, e.gt, s).total;
      },
      probes, opts);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_GT(r.probes, 0);
}

INSTANTIATE_TEST_SUITE_P(Variants, EndToEnd, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "Baseline" : "Dcnet"; });

TEST(Detect, DeterministicAndWellFormed) {
  Model m(tiny_config(), 21);
  Episode e = random_episode(22);
  SupportSet s = m.embed_supports(e.supports, e.classes);
  auto a = m.detect(e.query, s);
  auto b = m.detect(e.query, s);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(same_box(a[i].box, b[i].box));
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_GE(a[i].score, 0.0);
    EXPECT_LE(a[i].score, 1.0);
    EXPECT_TRUE(a[i].class_id == 1 || a[i].class_id == 3);
    EXPECT_GE(a[i].box.x1, 0.0);
    EXPECT_LE(a[i].box.x2, 32.0);
    if (i > 0) {
      EXPECT_GE(a[i - 1].score, a[i].score);
    }
  }
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  Model a(tiny_config(), 23), b(tiny_config(), 24);
  const std::string bytes = encode_checkpoint(a.store(), "{\"k\":1}");
  Checkpoint c = decode_checkpoint(bytes);
  EXPECT_EQ(c.metadata, "{\"k\":1}");
  restore_parameters(b.store(), c);
  for (std::size_t i = 0; i < a.store().params().size(); ++i)
    EXPECT_EQ(max_abs_diff(a.store().params()[i].tensor, b.store().params()[i].tensor), 0.0);

  const auto path = std::filesystem::temp_directory_path() / "dcnet_detector_test.ckpt";
  save_checkpoint(path, a.store(), "{}");
  Checkpoint from_file = load_checkpoint(path);
  EXPECT_EQ(from_file.arrays.size(), a.store().params().size());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsRejected) {
  Model a(tiny_config(), 25);
  std::string bytes = encode_checkpoint(a.store(), "{}");
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), ConfigError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ConfigError);
  EXPECT_THROW(decode_checkpoint("DCNETCKX" + bytes.substr(8)), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), ConfigError);

  Model other(ModelConfig{}, 1);
  EXPECT_THROW(restore_parameters(other.store(), decode_checkpoint(bytes)), ConfigError);
}

}  // namespace
}  // namespace dcnet::det
