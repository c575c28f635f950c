// dcnet: verification suites, training and evaluation on the synthetic
// shapes benchmark. Exit status 0 on success, 1 when a verification suite
// fails, 2 on configuration errors.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/harness.hpp"
#include "dcnet/reference/oracle_suite.hpp"

namespace {

using namespace dcnet;

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kConfigError = 2;

struct Options {
  harness::RunConfig cfg;
  std::string meta_schedule;
  std::string fine_schedule;
  std::string precision = "f64";
  bool no_drd = false;
  bool no_cfa = false;
  bool no_cfa_attn = false;
  bool baseline_reweight = false;
  int log_every = 100;
  std::string work_dir = "ablation";
  int train_images = 32;
};

// Sink for metrics lines: --out when given, stdout otherwise.
class MetricsOut {
 public:
  explicit MetricsOut(const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw ConfigError("cannot open metrics output: " + path.string());
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

train::StepCallback progress(int every) {
  if (every <= 0) return {};
  return [every, sum = 0.0, n = 0](const train::StepRecord& r) mutable {
    sum += r.loss;
    if (++n < every) return;
    fmt::print(stderr, "step {:5d}  lr {:.4g}  loss(avg {}) {:.4f}  rpn {:.3f}/{:.3f}  roi {:.3f}/{:.3f}\n",
               r.step + 1, r.lr, n, sum / n, r.rpn_cls, r.rpn_reg, r.roi_cls, r.roi_reg);
    sum = 0.0;
    n = 0;
  };
}

void finalize(Options& o, harness::Mode mode) {
  if (o.precision == "f32")
    throw ConfigError("--precision f32 is not supported: every computation runs in double precision");
  harness::RunConfig& c = o.cfg;
  c.mode = mode;
  c.meta_schedule = harness::parse_schedule(o.meta_schedule);
  c.fine_schedule = harness::parse_schedule(o.fine_schedule);
  if (o.no_drd) c.model.use_drd = false;
  if (o.no_cfa) c.model.use_cfa = false;
  if (o.no_cfa_attn) c.model.cfa_attention = false;
  if (o.baseline_reweight) {
    c.model.use_drd = false;
    c.model.baseline_reweight = true;
  }
  c.validate();
}

int cmd_gradcheck(const Options& o) {
  const auto results = harness::gradcheck_all(o.cfg.seed);
  bool ok = true;
  fmt::print("{:<44} {:>12} {:>12} {:>7}  status\n", "op", "max_rel", "max_abs", "probes");
  for (const auto& r : results) {
    fmt::print("{:<44} {:>12.3e} {:>12.3e} {:>7}  {}\n", r.name, r.max_rel_error, r.max_abs_error, r.probes,
               r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  fmt::print("{} ops, {}\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? kOk : kVerificationFailure;
}

int cmd_oracle(const Options& o) {
  bool ok = true;
  fmt::print("{:<16} {:>6} {:>12} {:>10} {:>8}  status\n", "oracle", "cases", "max_error", "tolerance", "seconds");
  for (const auto& r : reference::run_oracle_suite(o.cfg.seed)) {
    fmt::print("{:<16} {:>6} {:>12.3e} {:>10.0e} {:>8.2f}  {}{}\n", r.name, r.cases, r.max_error, r.tolerance,
               r.seconds, r.passed ? "ok" : "FAIL", r.detail.empty() ? "" : "  " + r.detail);
    ok = ok && r.passed;
  }
  return ok ? kOk : kVerificationFailure;
}

int cmd_meta_train(const Options& o) {
  if (o.cfg.out.empty()) throw ConfigError("meta-train needs --out for the checkpoint path");
  const train::TrainLog log = harness::meta_train_checkpoint(o.cfg, o.cfg.out, progress(o.log_every));
  fmt::print("{} steps in {:.1f}s, loss {:.4f} -> {:.4f} ({:.1f}% drop), checkpoint {}\n", log.losses.size(),
             log.seconds, log.start_average, log.end_average, 100.0 * log.relative_drop(), o.cfg.out.string());
  return kOk;
}

int cmd_suite(const Options& o, bool fine_tune) {
  MetricsOut out(o.cfg.out);
  harness::MetricsWriter writer(out.stream());
  const harness::SuiteReport r = harness::run_suite(o.cfg, &writer, fine_tune);
  fmt::print(stderr, "novel AP50 {:.4f} +- {:.4f}, base AP50 {:.4f} over {} runs\n", r.mean_novel_ap,
             r.std_novel_ap, r.mean_base_ap, r.runs.size());
  return kOk;
}

int cmd_ablate(const Options& o) {
  MetricsOut out(o.cfg.out);
  harness::MetricsWriter writer(out.stream());
  const auto report = harness::run_ablation(
      o.cfg, o.work_dir, &writer,
      [](const std::string& name, bool reused) {
        fmt::print(stderr, "{}: {}\n", name, reused ? "reusing meta-trained checkpoint" : "meta-training");
      },
      progress(o.log_every));
  for (const auto& [name, r] : report.variants)
    fmt::print(stderr, "{:<20} novel AP50 {:.4f} +- {:.4f}\n", name, r.mean_novel_ap, r.std_novel_ap);
  for (const auto& d : report.differences)
    fmt::print(stderr, "{} - {}: {:+.4f} +- {:.4f}\n", d.reference, d.other, d.mean, d.std);
  return kOk;
}

int cmd_export(const Options& o) {
  if (o.cfg.out.empty()) throw ConfigError("export-data needs --out for the target directory");
  data::ExportOptions e;
  e.dataset_seed = o.cfg.dataset_seed;
  e.test_seed = o.cfg.test_seed;
  e.k = o.cfg.k;
  e.train_images = o.train_images;
  e.test_images = o.cfg.test_images;
  data::export_dataset(o.cfg.out, o.cfg.split(), e, o.cfg.dataset);
  fmt::print("wrote {}\n", o.cfg.out.string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  harness::RunConfig& c = o.cfg;
  o.meta_schedule = harness::format_schedule(c.meta_schedule);
  o.fine_schedule = harness::format_schedule(c.fine_schedule);

  CLI::App app{"DCNet few-shot detection on a synthetic shapes benchmark"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Key-value configuration file (key = value per line); flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--seed", c.seed, "Model initialization and per-run seed");
  app.add_option("--dataset-seed", c.dataset_seed, "Seed of the training streams and shot pools");
  app.add_option("--test-seed", c.test_seed, "Seed of the test set");
  app.add_option("--runs", c.num_runs, "Independent fine-tune/eval runs")->check(CLI::PositiveNumber);
  app.add_option("--k", c.k, "Shots per class");
  app.add_option("--split", c.split_id, "Novel split: classes {s, s+3, s+6, s+9}");
  app.add_option("--test-images", c.test_images, "Test set size")->check(CLI::PositiveNumber);
  app.add_option("--out", c.out, "Metrics file (JSON lines; stdout if empty), checkpoint or export directory");
  app.add_option("--checkpoint", c.checkpoint, "Meta-trained checkpoint for fine-tune and eval");
  app.add_flag("--no-drd", o.no_drd, "Disable dense relation distillation");
  app.add_flag("--no-cfa", o.no_cfa, "Single-resolution RoI pooling instead of context-aware aggregation");
  app.add_flag("--no-cfa-attn", o.no_cfa_attn, "Fuse the CFA branches with equal weights");
  app.add_flag("--baseline-reweight", o.baseline_reweight,
               "Channel-wise class reweighting in place of DRD (implies --no-drd)");
  app.add_flag("--reset-classifier", c.reset_classifier, "Re-initialize the classifier before fine-tuning");
  app.add_option("--precision", o.precision, "Numeric precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--meta-schedule", o.meta_schedule, "Meta-training stages, iterations:lr[,...]");
  app.add_option("--fine-schedule", o.fine_schedule, "Fine-tuning stages, iterations:lr[,...]");
  app.add_option("--momentum", c.momentum, "SGD momentum");
  app.add_option("--weight-decay", c.weight_decay, "SGD weight decay");
  app.add_option("--clip-norm", c.clip_norm, "Global gradient norm clip (<= 0 disables)");
  app.add_option("--feature-dim", c.model.backbone.feature_dim, "Backbone feature channels C");
  app.add_option("--hidden", c.model.head.hidden, "RoI head hidden width");
  app.add_option("--log-every", o.log_every, "Training progress interval in steps (0 silences)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  auto* oracle = app.add_subcommand("oracle", "Compare vectorized ops against the reference implementations");
  auto* meta_train = app.add_subcommand("meta-train", "Meta-train on base classes and write a checkpoint to --out");
  auto* fine_tune = app.add_subcommand("fine-tune", "Fine-tune --checkpoint on k shots and evaluate, per run");
  auto* eval = app.add_subcommand("eval", "Evaluate --checkpoint without fine-tuning, per run");
  auto* ablate = app.add_subcommand("ablate", "Meta-train, fine-tune and evaluate each ablation variant");
  ablate->add_option("--work-dir", o.work_dir, "Directory for the per-variant checkpoints (reused when matching)");
  auto* export_data = app.add_subcommand("export-data", "Write sample images and annotations to --out");
  export_data->add_option("--train-images", o.train_images, "Meta-training images to export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gradcheck) {
      finalize(o, harness::Mode::kGradcheck);
      return cmd_gradcheck(o);
    }
    if (*oracle) {
      finalize(o, harness::Mode::kOracle);
      return cmd_oracle(o);
    }
    if (*meta_train) {
      finalize(o, harness::Mode::kMetaTrain);
      return cmd_meta_train(o);
    }
    if (*fine_tune) {
      finalize(o, harness::Mode::kFineTune);
      return cmd_suite(o, true);
    }
    if (*eval) {
      finalize(o, harness::Mode::kEval);
      return cmd_suite(o, false);
    }
    if (*ablate) {
      finalize(o, harness::Mode::kAblate);
      return cmd_ablate(o);
    }
    finalize(o, harness::Mode::kExportData);
    return cmd_export(o);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kConfigError;
  } catch (const InvalidArgument& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kConfigError;
  }
}
