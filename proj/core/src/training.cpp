#include "dcnet/training.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "dcnet/errors.hpp"
#include "dcnet/ops.hpp"
#include "dcnet/tape.hpp"

namespace dcnet::train {

namespace {

TrainLog run_loop(det::Model& model, const TrainOptions& opts, const std::function<data::Episode()>& next,
                  const StepCallback& on_step) {
  validate_schedule(opts.schedule);
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  const int steps = total_steps(opts.schedule);
  log.losses.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    StepRecord rec = train_step(model, next(), lr_at(opts.schedule, s), opts);
    rec.step = s;
    if (!std::isfinite(rec.loss)) throw ConfigError(fmt::format("training diverged at step {}", s));
    log.losses.push_back(rec.loss);
    if (on_step) on_step(rec);
  }
  const auto w = static_cast<std::size_t>(std::max(1, std::min(opts.average_window, steps)));
  log.start_average = std::accumulate(log.losses.begin(), log.losses.begin() + static_cast<std::ptrdiff_t>(w), 0.0) /
                      static_cast<double>(w);
  log.end_average = std::accumulate(log.losses.end() - static_cast<std::ptrdiff_t>(w), log.losses.end(), 0.0) /
                    static_cast<double>(w);
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace

int total_steps(const LrSchedule& schedule) {
  int n = 0;
  for (const auto& s : schedule) n += s.iterations;
  return n;
}

double lr_at(const LrSchedule& schedule, int step) {
  for (const auto& s : schedule) {
    if (step < s.iterations) return s.lr;
    step -= s.iterations;
  }
  return schedule.empty() ? 0.0 : schedule.back().lr;
}

void validate_schedule(const LrSchedule& schedule) {
  if (schedule.empty()) throw ConfigError("learning-rate schedule is empty");
  for (const auto& s : schedule) {
    if (s.iterations <= 0) throw ConfigError("schedule stages need a positive iteration count");
    if (!(s.lr > 0.0)) throw ConfigError("schedule learning rates must be positive");
  }
}

det::SupportSet embed_episode(const det::Model& model, const data::Episode& episode) {
  std::vector<Tensor> inputs;
  std::vector<int> ids;
  for (const auto& s : episode.supports) {
    inputs.push_back(det::support_input(s.image, s.mask));
    ids.push_back(s.class_id);
  }
  return model.embed_supports(inputs, ids);
}

StepRecord train_step(det::Model& model, const data::Episode& episode, double lr, const TrainOptions& opts) {
  Tape tape;
  StepRecord rec;
  rec.lr = lr;
  {
    TapeScope scope(tape);
    const det::SupportSet supports = embed_episode(model, episode);
    const det::ForwardTrace trace = model.forward(episode.query, supports, episode.gt);
    const det::LossBreakdown loss = model.loss(trace, episode.gt, supports);
    tape.backward(loss.total);
    rec.loss = loss.total.item();
    rec.rpn_cls = loss.rpn_cls;
    rec.rpn_reg = loss.rpn_reg;
    rec.roi_cls = loss.roi_cls;
    rec.roi_reg = loss.roi_reg;
  }
  auto& params = model.store().params();
  if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
  sgd_step(params, SgdOptions{lr, opts.momentum, opts.weight_decay});
  return rec;
}

TrainLog meta_train(det::Model& model, data::EpisodeSampler& sampler, const TrainOptions& opts,
                    const StepCallback& on_step) {
  return run_loop(model, opts, [&] { return sampler.next(data::Phase::kMetaTrain); }, on_step);
}

TrainLog fine_tune(det::Model& model, data::EpisodeSampler& sampler, const data::ShotBudget& pool,
                   const TrainOptions& opts, const StepCallback& on_step) {
  return run_loop(model, opts, [&] { return sampler.next(data::Phase::kFineTune, &pool); }, on_step);
}

det::SupportSet class_prototypes(const det::Model& model, const data::ShotBudget& pool, const data::SplitConfig& split,
                                 std::uint64_t seed, const data::DatasetConfig& cfg) {
  NoGradScope no_grad;
  Rng rng(seed);
  det::SupportSet out;
  for (int c : split.all_classes()) {
    auto it = pool.instances.find(c);
    if (it == pool.instances.end() || it->second.empty()) {
      throw ConfigError(fmt::format("shot pool has no instances of class {}", c));
    }
    Tensor acc;
    for (const auto& spec : it->second) {
      const data::SupportPair pair = data::make_support(spec, {}, rng, cfg);
      Tensor f = model.backbone(det::support_input(pair.image, pair.mask));
      acc = acc.defined() ? add(acc, f) : f;
    }
    out.class_ids.push_back(c);
    out.features.push_back(scale(acc, 1.0 / static_cast<double>(it->second.size())));
  }
  return out;
}

}  // namespace dcnet::train
