#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcnet/boxes.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/episodes.hpp"

namespace dcnet::eval {

struct ImageResult {
  std::vector<det::Detection> detections;
  std::vector<RoIBox> gt;  // class_id set
};

// VOC all-point interpolated AP for one class. Detections are matched in
// descending score order (ties: image order, then detection order) to the
// highest-IoU ground truth of that class in the same image; each ground
// truth matches at most once. nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const ImageResult> images, int class_id, double iou_threshold = 0.5);

struct RunMetrics {
  int run_index = 0;
  std::map<int, std::optional<double>> per_class_ap;  // nullopt: class absent from the test set
  double mean_novel_ap = 0.0;                         // NaN when no novel class is defined
  double mean_base_ap = 0.0;
  double wall_time_s = 0.0;
  std::vector<std::string> warnings;
};

RunMetrics score_run(std::span<const ImageResult> images, const data::SplitConfig& split, int run_index);

}  // namespace dcnet::eval
