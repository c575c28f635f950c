#include "dcnet/reference/oracle_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "dcnet/cfa.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/drd.hpp"
#include "dcnet/evaluation.hpp"
#include "dcnet/ops.hpp"
#include "dcnet/reference/reference.hpp"

namespace dcnet::reference {

namespace {

using Clock = std::chrono::steady_clock;

Tensor normal(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

double max_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

RoIBox make_box(double x1, double y1, double x2, double y2) {
  RoIBox b;
  b.x1 = x1;
  b.y1 = y1;
  b.x2 = x2;
  b.y2 = y2;
  return b;
}

// Tracks the worst error and the first failing case.
class Tally {
 public:
  Tally(std::string name, double tolerance) : t0_(Clock::now()) {
    r_.name = std::move(name);
    r_.tolerance = tolerance;
  }
  void record(double err, const std::string& what) {
    ++r_.cases;
    if (!(err <= r_.max_error)) r_.max_error = err;
    if (!(err <= r_.tolerance) && r_.passed) {
      r_.passed = false;
      r_.detail = fmt::format("{}: error {:.3e}", what, err);
    }
  }
  void fail(const std::string& what) {
    if (r_.passed) r_.detail = what;
    r_.passed = false;
  }
  OracleReport done() {
    r_.seconds = std::chrono::duration<double>(Clock::now() - t0_).count();
    return r_;
  }

 private:
  OracleReport r_;
  Clock::time_point t0_;
};

}  // namespace

OracleReport attention_oracle(std::uint64_t seed, int instances) {
  Tally t("drd_attention", 1e-10);
  Rng rng(seed);
  std::uniform_int_distribution<int> channels(1, 4), side(1, 8), classes(1, 4);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int i = 0; i < instances; ++i) {
    const int c = 8 * channels(rng);
    const int hq = side(rng), wq = side(rng), hs = side(rng), ws = side(rng), n = classes(rng);
    ParameterStore store;
    drd::Params p = drd::make_params(store, "drd.", c, rng);
    for (auto& prm : store.params())
      for (double& v : prm.tensor.mutable_data()) v = noise(rng);
    Tensor qf = normal({c, hq, wq}, rng);
    std::vector<Tensor> sf;
    for (int k = 0; k < n; ++k) sf.push_back(normal({c, hs, ws}, rng));
    const drd::DistillResult got =
        drd::distill_with_attention(drd::encode_query(qf, p.query), drd::encode_support(sf, p.support), p.phi,
                                    p.phi_prime);
    const std::string what = fmt::format("instance {} (C={}, q={}x{}, s={}x{}, N={})", i, c, hq, wq, hs, ws, n);
    double err = max_diff(got.refined, distill(qf, sf, p));
    for (int k = 0; k < n; ++k) err = std::max(err, max_diff(got.attention[static_cast<std::size_t>(k)].w,
                                                             attention(qf, sf[static_cast<std::size_t>(k)], p)));
    t.record(err, what);
  }
  return t.done();
}

OracleReport roi_align_oracle(std::uint64_t seed, int cases) {
  Tally t("roi_align", 1e-12);
  Rng rng(seed);
  std::uniform_int_distribution<int> side(2, 14), ch(1, 6), res(0, 2), ratio(1, 3);
  std::uniform_real_distribution<double> coord(-20.0, 130.0);
  const std::array<double, 3> scales{1.0, 0.5, 0.125};
  for (int i = 0; i < cases; ++i) {
    const Tensor f = normal({ch(rng), side(rng), side(rng)}, rng);
    const double a = coord(rng), b = coord(rng), c = coord(rng), d = coord(rng);
    const RoIBox box = make_box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d));
    const int r = cfa::kResolutions[static_cast<std::size_t>(res(rng))];
    const double scale = scales[static_cast<std::size_t>(i % 3)];
    const int sr = ratio(rng);
    const Tensor got = cfa::roi_align(f, box, r, scale, sr).pooled;
    t.record(max_diff(got, roi_align(f, box, r, scale, sr)), fmt::format("case {}", i));
  }

  // Degenerate boxes pool the single point; boxes fully outside give zeros.
  const Tensor f = normal({3, 8, 8}, rng);
  const std::vector<std::pair<RoIBox, cfa::PoolStatus>> edge{
      {make_box(20, 12, 20, 30), cfa::PoolStatus::kDegenerate},
      {make_box(10, 40, 35, 40), cfa::PoolStatus::kDegenerate},
      {make_box(33, 33, 33, 33), cfa::PoolStatus::kDegenerate},
      {make_box(80, 80, 120, 100), cfa::PoolStatus::kOutOfBounds},
      {make_box(-50, -40, -10, -9), cfa::PoolStatus::kOutOfBounds},
  };
  for (const auto& [box, status] : edge) {
    for (int r : cfa::kResolutions) {
      const cfa::RoiAlignResult got = cfa::roi_align(f, box, r, 0.125);
      const std::string what = fmt::format("edge box ({},{},{},{}) r={}", box.x1, box.y1, box.x2, box.y2, r);
      if (got.status != status) t.fail(what + ": wrong status");
      bool finite = true;
      for (double v : got.pooled.data()) finite = finite && std::isfinite(v);
      if (!finite) t.fail(what + ": non-finite output");
      if (status == cfa::PoolStatus::kOutOfBounds) {
        t.record(max_diff(got.pooled, Tensor::zeros(got.pooled.shape())), what);
      } else {
        t.record(max_diff(got.pooled, roi_align(f, box, r, 0.125, 2)), what);
      }
    }
  }
  return t.done();
}

OracleReport conv_oracle(std::uint64_t seed, int cases) {
  Tally t("conv2d", 1e-10);
  Rng rng(seed);
  std::uniform_int_distribution<int> ch(1, 8), side(3, 12), kernel(1, 3), stride(1, 2), pad(0, 1);
  for (int i = 0; i < cases; ++i) {
    const int ci = ch(rng), co = ch(rng), k = 2 * kernel(rng) - 1, s = stride(rng), p = pad(rng);
    const Tensor x = normal({ci, side(rng), side(rng)}, rng);
    const Tensor w = normal({co, ci, k, k}, rng), b = normal({co}, rng);
    if (x.dim(1) + 2 * p < k || x.dim(2) + 2 * p < k) continue;
    t.record(max_diff(dcnet::conv2d(x, w, b, {s, p, false}), conv2d(x, w, b, s, p)), fmt::format("case {}", i));
  }
  return t.done();
}

OracleReport resize_oracle(std::uint64_t seed, int cases) {
  Tally t("resize_bilinear", 1e-12);
  Rng rng(seed);
  std::uniform_int_distribution<int> ch(1, 5), res(0, 2);
  for (int i = 0; i < cases; ++i) {
    const int r = cfa::kResolutions[static_cast<std::size_t>(res(rng))];
    const Tensor m = normal({ch(rng), r, r}, rng);
    t.record(max_diff(cfa::resize_bilinear(m, cfa::kFusedResolution), resize_bilinear(m, cfa::kFusedResolution)),
             fmt::format("case {} ({} -> 8)", i, r));
  }
  return t.done();
}

OracleReport nms_oracle(std::uint64_t seed, int cases) {
  Tally t("nms", 0.0);
  Rng rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 60.0), side(3.0, 25.0), score(0.0, 1.0), thr(0.2, 0.8);
  for (int i = 0; i < cases; ++i) {
    std::vector<det::Detection> boxes(20);
    for (auto& d : boxes) {
      const double x = pos(rng), y = pos(rng);
      d.box = make_box(x, y, x + side(rng), y + side(rng));
      d.score = std::round(score(rng) * 10.0) / 10.0;
    }
    const double th = thr(rng);
    const auto got = det::nms(boxes, th);
    const auto want = nms(boxes, th);
    bool same = got.size() == want.size();
    for (std::size_t j = 0; same && j < got.size(); ++j) {
      same = got[j].score == want[j].score && got[j].box.x1 == want[j].box.x1 && got[j].box.y1 == want[j].box.y1 &&
             got[j].box.x2 == want[j].box.x2 && got[j].box.y2 == want[j].box.y2;
    }
    t.record(same ? 0.0 : 1.0, fmt::format("case {}", i));
  }
  return t.done();
}

OracleReport proposal_oracle(std::uint64_t seed, int cases) {
  // Separate translation units may contract multiply-adds differently, so
  // decoded coordinates are compared to a tight tolerance; ordering and count
  // must agree exactly.
  Tally t("rpn_proposals", 1e-9);
  det::ModelConfig mc;
  mc.backbone.stage_channels = {8, 8, 16};
  mc.backbone.feature_dim = 16;
  mc.head.hidden = 8;
  mc.rpn.pre_nms_top_k = 24;
  mc.rpn.max_proposals = 10;
  const det::Model model(mc, seed);
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const Tensor feat = normal({16, 12, 12}, rng, 1.5);
    const det::RpnOutput out = model.rpn_forward(feat);
    const auto got = model.propose(out, 96, 96);
    const auto want = proposals(out.anchors, out.objectness.data(), out.deltas.data(), mc.rpn, 96, 96);
    if (got.size() != want.size()) {
      t.fail(fmt::format("case {}: {} proposals vs {}", i, got.size(), want.size()));
      continue;
    }
    double err = 0.0;
    for (std::size_t j = 0; j < got.size(); ++j) {
      err = std::max({err, std::abs(got[j].box.x1 - want[j].x1), std::abs(got[j].box.y1 - want[j].y1),
                      std::abs(got[j].box.x2 - want[j].x2), std::abs(got[j].box.y2 - want[j].y2)});
    }
    t.record(err, fmt::format("case {}", i));
  }
  return t.done();
}

OracleReport ap_oracle(std::uint64_t seed, int cases) {
  Tally t("ap_scorer", 0.0);
  auto det_at = [](const RoIBox& b, int cls, double score) {
    det::Detection d;
    d.box = b;
    d.box.class_id = cls;
    d.box.score = score;
    d.class_id = cls;
    d.score = score;
    return d;
  };
  auto gt_at = [](double x1, double y1, double x2, double y2, int cls) {
    RoIBox b = make_box(x1, y1, x2, y2);
    b.class_id = cls;
    return b;
  };
  auto compare = [&](const std::vector<eval::ImageResult>& images, int classes, const std::string& what) {
    for (int c = 0; c < classes; ++c) {
      const auto got = eval::average_precision(images, c), want = reference::average_precision(images, c);
      if (got.has_value() != want.has_value()) {
        t.fail(what + ": definedness differs");
      } else if (got) {
        t.record(*got == *want ? 0.0 : std::max(std::abs(*got - *want), 1e-300), what);
      }
    }
  };

  // Ranked TP FP TP FP FP TP over five positives: AP = 13/30.
  std::vector<eval::ImageResult> crafted(5);
  crafted[0].gt = {gt_at(10, 10, 30, 30, 0)};
  crafted[0].detections = {det_at(make_box(10, 10, 30, 30), 0, 0.9)};
  crafted[1].gt = {gt_at(40, 40, 60, 60, 0)};
  crafted[1].detections = {det_at(make_box(52, 52, 72, 72), 0, 0.8)};
  crafted[2].gt = {gt_at(0, 0, 20, 20, 0), gt_at(50, 50, 80, 80, 0)};
  crafted[2].detections = {det_at(make_box(1, 1, 20, 21), 0, 0.7), det_at(make_box(0, 0, 19, 19), 0, 0.6)};
  crafted[3].gt = {gt_at(5, 5, 25, 25, 1)};
  crafted[3].detections = {det_at(make_box(5, 5, 25, 25), 0, 0.5)};
  crafted[4].gt = {gt_at(60, 10, 90, 40, 0)};
  crafted[4].detections = {det_at(make_box(61, 10, 90, 41), 0, 0.4)};
  compare(crafted, 2, "crafted scenario");
  const auto crafted_ap = eval::average_precision(crafted, 0);
  if (!crafted_ap || std::abs(*crafted_ap - 13.0 / 30.0) > 1e-15) t.fail("crafted scenario: AP is not 13/30");

  Rng rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 60.0), side(6.0, 30.0), jitter(-6.0, 6.0);
  std::uniform_int_distribution<int> cls(0, 2), count(0, 4), score(0, 10);
  for (int i = 0; i < cases; ++i) {
    std::vector<eval::ImageResult> images(static_cast<std::size_t>(1 + i % 6));
    for (auto& img : images) {
      for (int g = count(rng); g > 0; --g) {
        const double x = pos(rng), y = pos(rng);
        img.gt.push_back(gt_at(x, y, x + side(rng), y + side(rng), cls(rng)));
      }
      for (int d = count(rng) + count(rng); d > 0; --d) {
        RoIBox b;
        if (!img.gt.empty() && d % 2 == 0) {
          const RoIBox& g = img.gt[static_cast<std::size_t>(d) % img.gt.size()];
          b = make_box(g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng), g.y2 + jitter(rng));
        } else {
          const double x = pos(rng), y = pos(rng);
          b = make_box(x, y, x + side(rng), y + side(rng));
        }
        if (b.x2 <= b.x1 || b.y2 <= b.y1) continue;
        img.detections.push_back(det_at(b, cls(rng), score(rng) / 10.0));
      }
    }
    compare(images, 3, fmt::format("scenario {}", i));
  }
  return t.done();
}

std::vector<OracleReport> run_oracle_suite(std::uint64_t seed) {
  return {attention_oracle(seed),        roi_align_oracle(seed + 1), conv_oracle(seed + 2), resize_oracle(seed + 3),
          nms_oracle(seed + 4),          proposal_oracle(seed + 5),  ap_oracle(seed + 6)};
}

}  // namespace dcnet::reference
