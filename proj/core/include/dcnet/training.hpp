#pragma once

#include <functional>
#include <vector>

#include "dcnet/detector.hpp"
#include "dcnet/episodes.hpp"

namespace dcnet::train {

struct LrStage {
  int iterations = 0;
  double lr = 0.0;
};
using LrSchedule = std::vector<LrStage>;

int total_steps(const LrSchedule& schedule);
double lr_at(const LrSchedule& schedule, int step);
void validate_schedule(const LrSchedule& schedule);  // throws ConfigError

struct TrainOptions {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;  // <= 0 disables clipping
  int average_window = 100;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double rpn_cls = 0.0, rpn_reg = 0.0, roi_cls = 0.0, roi_reg = 0.0;
};

struct TrainLog {
  std::vector<double> losses;
  double start_average = 0.0;  // mean of the first `average_window` losses
  double end_average = 0.0;    // mean of the last `average_window` losses
  double seconds = 0.0;

  double relative_drop() const { return 1.0 - end_average / start_average; }
};

using StepCallback = std::function<void(const StepRecord&)>;

// Supports of an episode, embedded through the backbone (on the tape).
det::SupportSet embed_episode(const det::Model& model, const data::Episode& episode);

// Forward, backward and one SGD step on a single episode.
StepRecord train_step(det::Model& model, const data::Episode& episode, double lr, const TrainOptions& opts);

// Meta-training on base-class episodes from `sampler`.
TrainLog meta_train(det::Model& model, data::EpisodeSampler& sampler, const TrainOptions& opts,
                    const StepCallback& on_step = {});
// Meta fine-tuning on base + novel classes, supports restricted to `pool`.
TrainLog fine_tune(det::Model& model, data::EpisodeSampler& sampler, const data::ShotBudget& pool,
                   const TrainOptions& opts, const StepCallback& on_step = {});

// Per-class support features for inference: backbone features averaged over
// every pooled instance of the class. No gradients are recorded.
det::SupportSet class_prototypes(const det::Model& model, const data::ShotBudget& pool, const data::SplitConfig& split,
                                 std::uint64_t seed, const data::DatasetConfig& cfg = {});

}  // namespace dcnet::train
