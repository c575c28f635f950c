#include <cmath>

#include <gtest/gtest.h>

#include "dcnet/evaluation.hpp"
#include "dcnet/reference/reference.hpp"
#include "test_util.hpp"

namespace dcnet::eval {
namespace {

using testing::box;

det::Detection det_at(const RoIBox& b, int cls, double score) {
  det::Detection d;
  d.box = b;
  d.box.class_id = cls;
  d.box.score = score;
  d.class_id = cls;
  d.score = score;
  return d;
}

TEST(AveragePrecision, PerfectDetectorScoresOne) {
  std::vector<ImageResult> images(3);
  for (int i = 0; i < 3; ++i) {
    images[i].gt = {box(10 * i, 5, 10 * i + 20, 30, i % 2), box(50, 50, 70, 75, 2)};
    for (const auto& g : images[i].gt) images[i].detections.push_back(det_at(g, *g.class_id, 1.0));
  }
  for (int c = 0; c < 3; ++c) EXPECT_EQ(average_precision(images, c), 1.0);
}

TEST(AveragePrecision, NoDetectionsScoresZero) {
  std::vector<ImageResult> images(1);
  images[0].gt = {box(0, 0, 10, 10, 4)};
  EXPECT_EQ(average_precision(images, 4), 0.0);
}

TEST(AveragePrecision, AbsentClassIsUndefined) {
  std::vector<ImageResult> images(1);
  images[0].gt = {box(0, 0, 10, 10, 4)};
  images[0].detections = {det_at(box(0, 0, 10, 10), 5, 0.9)};
  EXPECT_FALSE(average_precision(images, 5).has_value());
}

// Five images, one class. Ranked outcomes: TP FP TP FP FP TP with 5
// positives, so the envelope gives 0.2*1 + 0.2*(2/3) + 0.2*(1/2) = 13/30.
std::vector<ImageResult> crafted_scenario() {
  std::vector<ImageResult> im(5);
  im[0].gt = {box(10, 10, 30, 30, 0)};
  im[0].detections = {det_at(box(10, 10, 30, 30), 0, 0.9)};
  im[1].gt = {box(40, 40, 60, 60, 0)};
  im[1].detections = {det_at(box(52, 52, 72, 72), 0, 0.8)};
  im[2].gt = {box(0, 0, 20, 20, 0), box(50, 50, 80, 80, 0)};
  im[2].detections = {det_at(box(1, 1, 20, 21), 0, 0.7), det_at(box(0, 0, 19, 19), 0, 0.6)};
  im[3].gt = {box(5, 5, 25, 25, 1)};
  im[3].detections = {det_at(box(5, 5, 25, 25), 0, 0.5)};
  im[4].gt = {box(60, 10, 90, 40, 0)};
  im[4].detections = {det_at(box(61, 10, 90, 41), 0, 0.4)};
  return im;
}

TEST(AveragePrecision, CraftedScenarioMatchesReference) {
  const auto im = crafted_scenario();
  const auto ap = average_precision(im, 0);
  ASSERT_TRUE(ap.has_value());
  EXPECT_NEAR(*ap, 13.0 / 30.0, 1e-15);
  EXPECT_EQ(ap, reference::average_precision(im, 0));
  EXPECT_EQ(average_precision(im, 1), 0.0);
  EXPECT_EQ(average_precision(im, 1), reference::average_precision(im, 1));
}

TEST(AveragePrecision, HigherThresholdOnlyLowersAp) {
  const auto im = crafted_scenario();
  EXPECT_LE(*average_precision(im, 0, 0.95), *average_precision(im, 0, 0.5));
}

// Random scenes with quantized scores (ties) and near-threshold overlaps.
TEST(AveragePrecision, RandomScenesMatchReference) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pos(0.0, 60.0), side(6.0, 30.0), jitter(-6.0, 6.0);
  std::uniform_int_distribution<int> cls(0, 2), count(0, 4), score(0, 10);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ImageResult> im(static_cast<std::size_t>(1 + trial % 6));
    for (auto& img : im) {
      for (int g = count(rng); g > 0; --g) {
        const double x = pos(rng), y = pos(rng);
        img.gt.push_back(box(x, y, x + side(rng), y + side(rng), cls(rng)));
      }
      for (int d = count(rng) + count(rng); d > 0; --d) {
        RoIBox b;
        if (!img.gt.empty() && d % 2 == 0) {
          const RoIBox& g = img.gt[static_cast<std::size_t>(d) % img.gt.size()];
          b = box(g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng), g.y2 + jitter(rng));
        } else {
          const double x = pos(rng), y = pos(rng);
          b = box(x, y, x + side(rng), y + side(rng));
        }
        if (b.x2 <= b.x1 || b.y2 <= b.y1) continue;
        img.detections.push_back(det_at(b, cls(rng), score(rng) / 10.0));
      }
    }
    for (int c = 0; c < 3; ++c) {
      const auto a = average_precision(im, c), r = reference::average_precision(im, c);
      ASSERT_EQ(a.has_value(), r.has_value());
      if (!a) continue;
      ++compared;
      EXPECT_EQ(*a, *r) << "trial " << trial << " class " << c;
      EXPECT_GE(*a, 0.0);
      EXPECT_LE(*a, 1.0);
    }
  }
  EXPECT_GT(compared, 300);
}

TEST(ScoreRun, SplitMeansAndWarnings) {
  const data::SplitConfig split = data::SplitConfig::standard(0);
  std::vector<ImageResult> im(1);
  // Class 0 (novel) detected perfectly, class 1 (base) missed; everything
  // else is absent.
  im[0].gt = {box(0, 0, 10, 10, 0), box(20, 20, 30, 30, 1)};
  im[0].detections = {det_at(box(0, 0, 10, 10), 0, 0.9)};
  RunMetrics m = score_run(im, split, 3);
  EXPECT_EQ(m.run_index, 3);
  EXPECT_EQ(m.per_class_ap.size(), 12u);
  EXPECT_EQ(m.per_class_ap.at(0), 1.0);
  EXPECT_EQ(m.per_class_ap.at(1), 0.0);
  EXPECT_FALSE(m.per_class_ap.at(2).has_value());
  EXPECT_EQ(m.mean_novel_ap, 1.0);
  EXPECT_EQ(m.mean_base_ap, 0.0);
  EXPECT_EQ(m.warnings.size(), 10u);

  std::vector<ImageResult> only_base(1);
  only_base[0].gt = {box(0, 0, 10, 10, 1)};
  EXPECT_TRUE(std::isnan(score_run(only_base, split, 0).mean_novel_ap));
}

}  // namespace
}  // namespace dcnet::eval
