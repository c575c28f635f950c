#include "dcnet/evaluation.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

namespace dcnet::eval {

namespace {
#ifdef __SIZEOF_FLOAT128__
using Wide = __float128;
#else
using Wide = long double;
#endif
}  // namespace

std::optional<double> average_precision(std::span<const ImageResult> images, int class_id, double iou_threshold) {
  struct Scored {
    double score;
    std::size_t image;
    const RoIBox* box;
  };
  std::vector<Scored> dets;
  std::size_t npos = 0;
  std::vector<std::vector<bool>> taken(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    taken[i].assign(images[i].gt.size(), false);
    for (const auto& g : images[i].gt) npos += g.class_id == class_id ? 1 : 0;
    for (const auto& d : images[i].detections) {
      if (d.class_id == class_id) dets.push_back({d.score, i, &d.box});
    }
  }
  if (npos == 0) return std::nullopt;
  std::stable_sort(dets.begin(), dets.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  // Counts after each ranked detection; ratios stay as integer pairs so the
  // envelope comparisons are exact.
  std::vector<std::int64_t> tp_at, seen_at;
  std::int64_t tp = 0;
  for (const auto& d : dets) {
    const auto& gts = images[d.image].gt;
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].class_id != class_id) continue;
      const double o = iou(*d.box, gts[j]);
      if (o > best) {
        best = o;
        best_j = j;
      }
    }
    if (best >= iou_threshold && !taken[d.image][best_j]) {
      taken[d.image][best_j] = true;
      ++tp;
    }
    tp_at.push_back(tp);
    seen_at.push_back(static_cast<std::int64_t>(tp_at.size()));
  }

  // Precision envelope from the right, then the step-curve area. Each term
  // is an integer ratio; summing in binary128 and rounding once keeps the
  // result equal to the correctly rounded exact value.
  const auto n = static_cast<std::int64_t>(npos);
  std::int64_t env_num = 0, env_den = 1;
  Wide ap = 0;
  for (std::size_t i = tp_at.size(); i-- > 0;) {
    if (tp_at[i] * env_den > env_num * seen_at[i]) {
      env_num = tp_at[i];
      env_den = seen_at[i];
    }
    const std::int64_t step = tp_at[i] - (i > 0 ? tp_at[i - 1] : 0);
    if (step > 0) ap += static_cast<Wide>(step * env_num) / static_cast<Wide>(n * env_den);
  }
  return static_cast<double>(ap);
}

RunMetrics score_run(std::span<const ImageResult> images, const data::SplitConfig& split, int run_index) {
  RunMetrics m;
  m.run_index = run_index;
  std::vector<double> novel, base;
  for (int c : split.all_classes()) {
    auto ap = average_precision(images, c);
    m.per_class_ap[c] = ap;
    if (!ap) {
      m.warnings.push_back(fmt::format("class {} ({}) absent from the test set; AP undefined", c,
                                       data::shape_name(c)));
      continue;
    }
    (split.is_novel(c) ? novel : base).push_back(*ap);
  }
  auto avg = [](const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                     : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  m.mean_novel_ap = avg(novel);
  m.mean_base_ap = avg(base);
  return m;
}

}  // namespace dcnet::eval
