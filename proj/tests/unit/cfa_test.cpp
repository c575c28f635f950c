#include <cmath>

#include <gtest/gtest.h>

#include "dcnet/cfa.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/reference/reference.hpp"
#include "test_util.hpp"

namespace dcnet::cfa {
namespace {

using testing::box;
using testing::max_abs_diff;
using testing::random_tensor;

Params zero_params(int c) {
  ParameterStore store;
  Rng rng(1);
  Params p = make_params(store, "cfa.", c, rng);
  for (auto& prm : store.params())
    for (double& v : prm.tensor.mutable_data()) v = 0.0;
  return p;
}

TEST(RoiAlign, ConstantFeature) {
  for (int r : kResolutions) {
    RoiAlignResult out = roi_align(Tensor::full({3, 10, 10}, 2.5), box(7.3, 11.0, 60.2, 44.9), r, 1.0 / 8.0);
    EXPECT_EQ(out.status, PoolStatus::kOk);
    EXPECT_EQ(out.pooled.shape(), (Shape{3, r, r}));
    for (double v : out.pooled.data()) EXPECT_NEAR(v, 2.5, 1e-14);
  }
}

TEST(RoiAlign, SingleCellAtUnitScale) {
  std::mt19937_64 rng(2);
  Tensor f = random_tensor({2, 5, 6}, rng);
  RoiAlignResult out = roi_align(f, box(3, 2, 4, 3), 1, 1.0, 1);
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(out.pooled[c], f[c * 30 + 2 * 6 + 3], 1e-15);
}

TEST(RoiAlign, MatchesBilinearOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 90.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor f = random_tensor({4, 10, 10}, rng);
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    RoIBox bx = box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d));
    for (int r : {1, 4, 7}) {
      Tensor got = roi_align(f, bx, r, 1.0 / 8.0).pooled;
      EXPECT_LT(max_abs_diff(got, reference::roi_align(f, bx, r, 1.0 / 8.0, 2)), 1e-12);
    }
  }
}

TEST(RoiAlign, DegenerateAndOutsideBoxesAreFlagged) {
  std::mt19937_64 rng(4);
  Tensor f = random_tensor({2, 6, 6}, rng);
  RoiAlignResult deg = roi_align(f, box(20, 12, 20, 30), 4, 1.0 / 8.0);
  EXPECT_EQ(deg.status, PoolStatus::kDegenerate);
  for (double v : deg.pooled.data()) EXPECT_TRUE(std::isfinite(v));
  // Every bin holds the single sample at the box point.
  for (int c = 0; c < 2; ++c)
    for (int i = 1; i < 16; ++i) EXPECT_EQ(deg.pooled[c * 16 + i], deg.pooled[c * 16]);
  EXPECT_LT(max_abs_diff(deg.pooled, reference::roi_align(f, box(20, 12, 20, 30), 4, 1.0 / 8.0, 2)), 1e-12);

  RoiAlignResult out = roi_align(f, box(100, 100, 140, 120), 4, 1.0 / 8.0);
  EXPECT_EQ(out.status, PoolStatus::kOutOfBounds);
  for (double v : out.pooled.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(roi_align(f, box(5, 5, 2, 8), 4, 1.0 / 8.0), InvalidArgument);
  EXPECT_THROW(roi_align(f, box(1, 1, 8, 8), 0, 1.0 / 8.0), InvalidArgument);
}

TEST(RoiAlign, TranslationConsistency) {
  std::mt19937_64 rng(5);
  Tensor f = random_tensor({3, 12, 12}, rng);
  Tensor moved(Shape{3, 12, 12});
  const int dy = 2, dx = 3;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + dy < 12; ++y)
      for (int x = 0; x + dx < 12; ++x)
        moved.mutable_data()[static_cast<std::size_t>((c * 12 + y + dy) * 12 + x + dx)] = f[(c * 12 + y) * 12 + x];
  const RoIBox b = box(9.7, 4.1, 41.3, 50.2);
  const RoIBox shifted = box(b.x1 + 8 * dx, b.y1 + 8 * dy, b.x2 + 8 * dx, b.y2 + 8 * dy);
  for (int r : kResolutions) {
    EXPECT_LT(max_abs_diff(roi_align(f, b, r, 1.0 / 8.0).pooled, roi_align(moved, shifted, r, 1.0 / 8.0).pooled),
              1e-9);
  }
}

TEST(ResizeBilinear, IdentityConstantAndMidpoint) {
  std::mt19937_64 rng(6);
  Tensor m = random_tensor({2, 8, 8}, rng);
  EXPECT_EQ(max_abs_diff(resize_bilinear(m, 8), m), 0.0);
  const Tensor flat = resize_bilinear(Tensor::full({1, 4, 4}, -3.0), 8);
  for (double v : flat.data()) EXPECT_NEAR(v, -3.0, 1e-14);
  Tensor sq = resize_bilinear(Tensor::from({1, 2, 2}, {0, 1, 2, 3}), 3);
  EXPECT_DOUBLE_EQ(sq[4], 1.5);
  EXPECT_DOUBLE_EQ(sq[0], 0.0);
  EXPECT_DOUBLE_EQ(sq[8], 3.0);
  for (int src : {4, 12}) {
    Tensor x = random_tensor({3, src, src}, rng);
    EXPECT_LT(max_abs_diff(resize_bilinear(x, 8), reference::resize_bilinear(x, 8)), 1e-13);
  }
}

TEST(BranchWeight, ZeroParamsAndDeterminism) {
  Params z = zero_params(16);
  std::mt19937_64 rng(7);
  Tensor pooled = random_tensor({16, 4, 4}, rng);
  EXPECT_EQ(branch_weight(pooled, z.branches[0]).item(), 0.0);
  ParameterStore store;
  Rng r(8);
  Params p = make_params(store, "cfa.", 16, r);
  EXPECT_EQ(branch_weight(pooled, p.branches[1]).item(), branch_weight(pooled.clone(), p.branches[1]).item());
  EXPECT_EQ(p.branches[0].fc1_weight.shape(), (Shape{4, 16}));
  EXPECT_FALSE(p.branches[0].fc1_weight.same_storage(p.branches[1].fc1_weight));
}

TEST(BranchWeight, Gradients) {
  ParameterStore store;
  Rng r(9);
  Params p = make_params(store, "cfa.", 16, r);
  std::mt19937_64 rng(10);
  const auto& b = p.branches[2];
  auto res = gradcheck("branch_weight",
                       [](const std::vector<Tensor>& in) { return branch_weight(in[0], {in[1], in[2], in[3], in[4]}); },
                       {random_tensor({16, 12, 12}, rng), b.fc1_weight, b.fc1_bias, b.fc2_weight, b.fc2_bias});
  EXPECT_TRUE(res.passed) << res.max_rel_error;
}

TEST(Aggregate, EqualLogitsGiveUniformWeights) {
  std::mt19937_64 rng(11);
  PooledFeature pf = aggregate(random_tensor({16, 12, 12}, rng), box(8, 8, 70, 60), zero_params(16));
  for (int b = 0; b < 3; ++b) EXPECT_NEAR(pf.weights[b], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(pf.fused.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(pf.per_branch[2].shape(), (Shape{16, 12, 12}));
}

TEST(Aggregate, ConstantFeatureStaysConstant) {
  ParameterStore store;
  Rng r(12);
  Params p = make_params(store, "cfa.", 8, r);
  PooledFeature pf = aggregate(Tensor::full({8, 10, 10}, 0.75), box(3, 9, 51, 77), p);
  for (double v : pf.fused.data()) EXPECT_NEAR(v, 0.75, 1e-14);
}

TEST(Aggregate, SaturatedBranchReducesToSingleResolution) {
  std::mt19937_64 rng(13);
  Tensor f = random_tensor({16, 12, 12}, rng);
  const RoIBox b = box(10.5, 3.2, 77.1, 66.6);
  Params p = zero_params(16);
  p.branches[1].fc2_bias.mutable_data()[0] = 40.0;
  PooledFeature pf = aggregate(f, b, p);
  EXPECT_LT(max_abs_diff(pf.fused, roi_align(f, b, 8, 1.0 / 8.0).pooled), 1e-8);

  Params q = zero_params(16);
  q.branches[0].fc2_bias.mutable_data()[0] = 20.0;
  PooledFeature p4 = aggregate(f, b, q);
  EXPECT_LT(max_abs_diff(p4.fused, resize_bilinear(p4.per_branch[0], 8)), 1e-7);
}

TEST(Aggregate, WithoutAttentionUsesFixedThirds) {
  std::mt19937_64 rng(14);
  Tensor f = random_tensor({8, 12, 12}, rng);
  const RoIBox b = box(4, 4, 60, 50);
  PooledFeature pf = aggregate(f, b, Params{}, {1.0 / 8.0, 2, false});
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(pf.weights[i], 1.0 / 3.0);
}

TEST(Aggregate, Gradients) {
  ParameterStore store;
  Rng r(15);
  Params p = make_params(store, "cfa.", 8, r);
  std::mt19937_64 rng(16);
  const RoIBox b = box(6.1, 2.2, 70.3, 59.9);
  auto res = gradcheck(
      "aggregate",
      [&p, b](const std::vector<Tensor>& in) {
        Params q = p;
        q.branches[0].fc1_weight = in[1];
        q.branches[1].fc2_weight = in[2];
        q.branches[2].fc1_bias = in[3];
        PooledFeature pf = aggregate(in[0], b, q);
        return concat({reshape(pf.fused, {pf.fused.numel()}), pf.weights}, 0);
      },
      {random_tensor({8, 10, 10}, rng), p.branches[0].fc1_weight, p.branches[1].fc2_weight, p.branches[2].fc1_bias});
  EXPECT_TRUE(res.passed) << res.max_rel_error;
}

}  // namespace
}  // namespace dcnet::cfa
