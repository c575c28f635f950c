#include <cmath>
#include <optional>
#include <random>

#include "dcnet/cfa.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/drd.hpp"
#include "dcnet/harness.hpp"
#include "dcnet/ops.hpp"

namespace dcnet::harness {

namespace {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = d(rng_);
    return Tensor(std::move(shape), std::move(v));
  }

  // Values at least `gap` away from zero, for ops with a kink at the origin.
  Tensor away_from_zero(Shape shape, double gap = 0.1) {
    Tensor t = normal(std::move(shape));
    for (double& x : t.mutable_data()) x = x >= 0 ? x + gap : x - gap;
    return t;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

// Small model with every component enabled; used for the module-level cases.
RoIBox box_of(double x1, double y1, double x2, double y2, std::optional<int> cls = std::nullopt) {
  RoIBox b;
  b.x1 = x1;
  b.y1 = y1;
  b.x2 = x2;
  b.y2 = y2;
  b.class_id = cls;
  return b;
}

det::ModelConfig tiny_model(bool baseline) {
  det::ModelConfig m;
  m.backbone.stage_channels = {8, 8, 16};
  m.backbone.feature_dim = 16;
  m.head.hidden = 24;
  m.use_drd = !baseline;
  m.baseline_reweight = baseline;
  return m;
}

}  // namespace

std::vector<GradCase> default_gradcheck_cases(std::uint64_t seed) {
  Gen g(seed);
  std::vector<GradCase> cases;
  auto reg = [&](std::string name, GradCheckFn fn, std::vector<Tensor> inputs) {
    cases.push_back({std::move(name), std::move(fn), std::move(inputs)});
  };
  using V = const std::vector<Tensor>&;

  // tensor_autograd
  reg("conv2d/stride1_pad1", [](V in) { return conv2d(in[0], in[1], in[2], {1, 1, false}); },
      {g.normal({3, 6, 6}), g.normal({4, 3, 3, 3}), g.normal({4})});
  reg("conv2d/stride2_pad1", [](V in) { return conv2d(in[0], in[1], in[2], {2, 1, false}); },
      {g.normal({3, 8, 8}), g.normal({5, 3, 3, 3}), g.normal({5})});
  reg("conv2d/1x1_no_bias", [](V in) { return conv2d(in[0], in[1], Tensor{}); },
      {g.normal({4, 5, 5}), g.normal({3, 4, 1, 1})});
  reg("linear", [](V in) { return linear(in[0], in[1], in[2]); }, {g.normal({4, 6}), g.normal({5, 6}), g.normal({5})});
  reg("matmul", [](V in) { return matmul(in[0], in[1]); }, {g.normal({3, 4}), g.normal({4, 5})});
  reg("transpose", [](V in) { return transpose(in[0]); }, {g.normal({3, 4})});
  reg("reshape", [](V in) { return reshape(in[0], Shape{6, 4}); }, {g.normal({2, 3, 4})});
  reg("softmax/axis1", [](V in) { return softmax(in[0], 1); }, {g.normal({3, 5})});
  reg("softmax/axis0", [](V in) { return softmax(in[0], 0); }, {g.normal({4, 3})});
  reg("relu", [](V in) { return relu(in[0]); }, {g.away_from_zero({3, 4, 4})});
  reg("global_avg_pool", [](V in) { return global_avg_pool(in[0]); }, {g.normal({3, 4, 5})});
  reg("concat/axis0", [](V in) { return concat({in[0], in[1]}, 0); }, {g.normal({2, 3}), g.normal({4, 3})});
  reg("concat/axis1", [](V in) { return concat({in[0], in[1]}, 1); }, {g.normal({2, 3}), g.normal({2, 2})});
  reg("add", [](V in) { return add(in[0], in[1]); }, {g.normal({3, 4}), g.normal({3, 4})});
  reg("sub", [](V in) { return sub(in[0], in[1]); }, {g.normal({3, 4}), g.normal({3, 4})});
  reg("mul", [](V in) { return mul(in[0], in[1]); }, {g.normal({3, 4}), g.normal({3, 4})});
  reg("scale", [](V in) { return scale(in[0], -1.7); }, {g.normal({3, 4})});
  reg("scale_by", [](V in) { return scale_by(in[0], in[1]); }, {g.normal({3, 4}), g.normal({1})});
  reg("add_row_bias", [](V in) { return add_row_bias(in[0], in[1]); }, {g.normal({3, 4}), g.normal({4})});
  reg("channel_scale", [](V in) { return channel_scale(in[0], in[1]); }, {g.normal({3, 2, 2}), g.normal({3})});
  reg("sum/axis1", [](V in) { return sum(in[0], 1); }, {g.normal({3, 4})});
  reg("sum/all", [](V in) { return sum(in[0]); }, {g.normal({3, 4})});
  reg("mean", [](V in) { return mean(in[0]); }, {g.normal({3, 4})});
  reg("gather",
      [](V in) {
        const std::vector<std::int64_t> idx{0, 5, 5, 11, 3};
        return gather(in[0], idx);
      },
      {g.normal({3, 4})});
  reg("cross_entropy",
      [](V in) {
        const std::vector<int> labels{0, 3, 2, 3};
        return cross_entropy(in[0], labels);
      },
      {g.normal({4, 4})});
  reg("binary_cross_entropy_with_logits",
      [](V in) {
        const std::vector<double> t{1, 0, 0, 1, 1};
        return binary_cross_entropy_with_logits(in[0], t);
      },
      {g.normal({5})});
  {
    // Differences kept clear of the transition point.
    Tensor target = g.normal({6});
    Tensor pred = target.clone();
    const double offsets[] = {0.3, -0.4, 1.6, -2.2, 0.05, 0.7};
    for (std::size_t i = 0; i < 6; ++i) pred.mutable_data()[i] += offsets[i];
    reg("smooth_l1", [](V in) { return smooth_l1(in[0], in[1]); }, {pred, target});
  }
  {
    SamplingPlan plan;
    plan.out_h = 2;
    plan.out_w = 3;
    std::uniform_int_distribution<std::int64_t> src(0, 19);
    std::uniform_real_distribution<double> w(-1.0, 1.0);
    plan.offsets.push_back(0);
    for (int o = 0; o < 6; ++o) {
      for (int j = 0; j < 3; ++j) {
        plan.source.push_back(src(g.rng()));
        plan.weight.push_back(w(g.rng()));
      }
      plan.offsets.push_back(static_cast<std::int64_t>(plan.source.size()));
    }
    reg("resample", [plan](V in) { return resample(in[0], plan); }, {g.normal({2, 4, 5})});
  }

  // drd
  {
    ParameterStore store;
    const drd::Params p = drd::make_params(store, "drd.", 16, g.rng());
    Tensor qf = g.normal({16, 3, 3});
    std::vector<Tensor> sf{g.normal({16, 2, 3}), g.normal({16, 2, 3})};
    reg("drd/encode_query",
        [p](V in) {
          drd::EncoderParams e{{in[1], in[2]}, {in[3], in[4]}};
          drd::KeyValueMaps kv = drd::encode_query(in[0], e);
          return concat({reshape(kv.key, Shape{kv.key.numel()}), reshape(kv.value, Shape{kv.value.numel()})}, 0);
        },
        {qf, p.query.key.weight, p.query.key.bias, p.query.value.weight, p.query.value.bias});
    reg("drd/similarity_phi",
        [](V in) { return drd::similarity(in[0], in[1], {in[2]}, {in[3]}); },
        {g.normal({2, 3, 3}), g.normal({2, 2, 3}), p.phi.weight, p.phi_prime.weight});
    reg("drd/attend", [](V in) { return drd::attend(in[0]).w; }, {g.normal({4, 6})});
    reg("drd/distill",
        [p](V in) {
          drd::Params q = p;
          q.phi.weight = in[2];
          q.phi_prime.weight = in[3];
          q.support.value.weight = in[4];
          const std::vector<Tensor> feats{in[1], in[5]};
          return drd::distill(drd::encode_query(in[0], q.query), drd::encode_support(feats, q.support), q.phi,
                              q.phi_prime);
        },
        {qf, sf[0], p.phi.weight, p.phi_prime.weight, p.support.value.weight, sf[1]});
  }

  // cfa
  {
    ParameterStore store;
    const cfa::Params p = cfa::make_params(store, "cfa.", 8, g.rng());
    Tensor feat = g.normal({8, 6, 6});
    const RoIBox box = box_of(5.3, 7.1, 33.9, 29.4);
    for (int r : cfa::kResolutions) {
      reg("cfa/roi_align_" + std::to_string(r),
          [box, r](V in) { return cfa::roi_align(in[0], box, r, 1.0 / 8.0).pooled; }, {feat});
    }
    reg("cfa/resize_bilinear_4to8", [](V in) { return cfa::resize_bilinear(in[0], 8); }, {g.normal({3, 4, 4})});
    reg("cfa/resize_bilinear_12to8", [](V in) { return cfa::resize_bilinear(in[0], 8); }, {g.normal({2, 12, 12})});
    for (std::size_t b = 0; b < 3; ++b) {
      const auto& bp = p.branches[b];
      reg("cfa/branch_weight_" + std::to_string(cfa::kResolutions[b]),
          [](V in) { return cfa::branch_weight(in[0], {in[1], in[2], in[3], in[4]}); },
          {g.normal({8, 4, 4}), bp.fc1_weight, bp.fc1_bias, bp.fc2_weight, bp.fc2_bias});
    }
    reg("cfa/aggregate",
        [p, box](V in) {
          cfa::Params q = p;
          q.branches[0].fc2_weight = in[1];
          q.branches[1].fc1_weight = in[2];
          q.branches[2].fc2_bias = in[3];
          cfa::PooledFeature f = cfa::aggregate(in[0], box, q);
          return concat({reshape(f.fused, Shape{f.fused.numel()}), f.weights}, 0);
        },
        {feat, p.branches[0].fc2_weight, p.branches[1].fc1_weight, p.branches[2].fc2_bias});
  }

  // detector
  {
    reg("det/channel_blocked_linear",
        [](V in) { return det::channel_blocked_linear(in[0], in[1], 3); }, {g.normal({2, 12}), g.normal({5, 12})});

    auto model = std::make_shared<det::Model>(tiny_model(false), seed);
    auto base_model = std::make_shared<det::Model>(tiny_model(true), seed + 1);
    Tensor query = g.normal({3, 32, 32}, 0.5);
    std::vector<Tensor> support_imgs{g.normal({4, 24, 24}, 0.5), g.normal({4, 24, 24}, 0.5)};
    const std::vector<int> ids{2, 5};
    std::vector<RoIBox> gt{box_of(4, 6, 20, 18, 2), box_of(14, 12, 30, 30, 5)};
    std::vector<RoIBox> rois{box_of(3, 5, 21, 20), box_of(15, 10, 29, 31), box_of(0, 0, 12, 14), box_of(8, 8, 24, 24)};

    reg("det/backbone", [model](V in) { return model->backbone(in[0]); },
        {g.normal({4, 16, 16}, 0.5)});
    reg("det/rpn_forward",
        [model](V in) {
          det::RpnOutput r = model->rpn_forward(in[0]);
          return concat({r.objectness, reshape(r.deltas, Shape{r.deltas.numel()})}, 0);
        },
        {g.normal({16, 4, 4})});
    reg("det/roi_head",
        [model](V in) {
          const std::vector<Tensor> fused{in[0], in[1]};
          det::HeadOutput h = model->roi_head(fused);
          return concat({reshape(h.class_logits, Shape{h.class_logits.numel()}),
                         reshape(h.box_deltas, Shape{h.box_deltas.numel()})},
                        0);
        },
        {g.normal({16, 8, 8}), g.normal({16, 8, 8}), model->store().get("head.fc1.weight"),
         model->store().get("head.cls.weight"), model->store().get("head.box.bias")});
    reg("det/baseline_head",
        [base_model](V in) {
          const std::vector<Tensor> fused{in[0], in[1]};
          det::SupportSet s{{2, 5}, {in[2], in[3]}};
          det::HeadOutput h = base_model->baseline_head(fused, s);
          return concat({reshape(h.class_logits, Shape{h.class_logits.numel()}),
                         reshape(h.box_deltas, Shape{h.box_deltas.numel()})},
                        0);
        },
        {g.normal({16, 8, 8}), g.normal({16, 8, 8}), g.normal({16, 3, 3}), g.normal({16, 3, 3}),
         base_model->store().get("head.fc1.weight")});

    auto end_to_end = [query, support_imgs, ids, gt, rois](const std::shared_ptr<det::Model>& m) {
      return [=](V) {
        det::SupportSet s = m->embed_supports(support_imgs, ids);
        det::ForwardTrace t = m->forward(query, s, gt, &rois);
        return m->loss(t, gt, s).total;
      };
    };
    auto& st = model->store();
    reg("det/loss_end_to_end", end_to_end(model),
        {st.get("backbone.conv1.weight"), st.get("backbone.conv4.bias"), st.get("drd.query_encoder.key.weight"),
         st.get("drd.support_encoder.value.weight"), st.get("drd.phi.weight"), st.get("drd.phi_prime.weight"),
         st.get("rpn.objectness.weight"), st.get("rpn.deltas.weight"), st.get("cfa.branch8.fc1.weight"),
         st.get("cfa.branch12.fc2.weight"), st.get("head.fc1.bias"), st.get("head.cls.weight"),
         st.get("head.box.weight")});
    auto& bst = base_model->store();
    reg("det/baseline_loss_end_to_end", end_to_end(base_model),
        {bst.get("backbone.conv2.weight"), bst.get("cfa.branch4.fc1.weight"), bst.get("head.fc1.weight"),
         bst.get("head.cls.bias"), bst.get("head.box.weight")});
  }
  return cases;
}

}  // namespace dcnet::harness
