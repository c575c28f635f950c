#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dcnet/checkpoint.hpp"
#include "dcnet/detector.hpp"
#include "dcnet/episodes.hpp"
#include "dcnet/evaluation.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/training.hpp"

namespace dcnet::harness {

enum class Mode { kGradcheck, kOracle, kMetaTrain, kFineTune, kEval, kAblate, kExportData };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);  // accepts "meta-train" and "meta_train"

struct RunConfig {
  Mode mode = Mode::kEval;
  det::ModelConfig model;
  data::DatasetConfig dataset;
  int k = 5;
  int split_id = 0;
  int num_runs = 10;
  int test_images = 200;
  std::uint64_t seed = 1;  // model initialization and per-run streams
  std::uint64_t dataset_seed = 2024;
  std::uint64_t test_seed = 4242;
  train::LrSchedule meta_schedule{{5000, 0.005}, {1000, 0.0005}};
  train::LrSchedule fine_schedule{{400, 0.005}, {100, 0.0005}};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
  bool reset_classifier = false;  // re-initialize the classifier before fine-tuning
  std::filesystem::path checkpoint;  // meta-trained weights (fine-tune, eval)
  std::filesystem::path out;         // metrics or checkpoint destination

  void validate() const;  // throws ConfigError
  data::SplitConfig split() const { return data::SplitConfig::standard(split_id); }
  train::TrainOptions meta_options() const;
  train::TrainOptions fine_options() const;
};

// "5000:0.005,1000:0.0005"
train::LrSchedule parse_schedule(const std::string& text);
std::string format_schedule(const train::LrSchedule& schedule);

// JSON text of the configuration, echoed into every metrics record.
std::string config_json(const RunConfig& cfg);
std::string model_config_json(const det::ModelConfig& cfg);
det::ModelConfig parse_model_config(const std::string& json);

// Serialized JSON-lines sink; safe to share between concurrent runs.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out) : out_(&out) {}
  void write(const std::string& line);

 private:
  std::ostream* out_;
  std::mutex mu_;
};

struct SuiteReport {
  std::vector<eval::RunMetrics> runs;
  double mean_novel_ap = 0.0, std_novel_ap = 0.0;
  double mean_base_ap = 0.0, std_base_ap = 0.0;
  std::map<int, double> mean_class_ap;  // over runs where the class is defined
};

// Mean and population standard deviation over runs.
SuiteReport aggregate(std::vector<eval::RunMetrics> runs);

std::string run_record(const eval::RunMetrics& m, const RunConfig& cfg, const std::string& variant = "");
std::string aggregate_record(const SuiteReport& r, const RunConfig& cfg, const std::string& variant = "");
// Inverse of run_record for the metrics fields.
eval::RunMetrics parse_run_record(const std::string& line);

// Meta-trains a freshly initialized model and saves it with its
// configuration as checkpoint metadata.
train::TrainLog meta_train_checkpoint(const RunConfig& cfg, const std::filesystem::path& path,
                                      const train::StepCallback& on_step = {});

// Configuration fields that determine meta-training, as JSON text. Stored in
// checkpoints so a matching one can be reused instead of retrained.
std::string meta_train_key(const RunConfig& cfg);
// The checkpoint at `path` if it exists, decodes and was meta-trained under
// the same key as `cfg`.
std::optional<Checkpoint> reusable_checkpoint(const RunConfig& cfg, const std::filesystem::path& path);

// Rebuilds the model recorded in a checkpoint. ConfigError if missing or
// malformed.
std::unique_ptr<det::Model> load_model(const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

eval::RunMetrics evaluate(const det::Model& model, const det::SupportSet& supports,
                          std::span<const data::TestImage> test, const data::SplitConfig& split, int run_index);

// One (pool, fine-tune, eval) cycle starting from `ckpt`. With
// fine_tune == false the checkpoint is evaluated as is.
eval::RunMetrics run_once(const RunConfig& cfg, const Checkpoint& ckpt, std::span<const data::TestImage> test,
                          int run_index, bool fine_tune = true);

// num_runs cycles from the checkpoint at cfg.checkpoint; per-run records and
// the aggregate go to `writer` when given.
SuiteReport run_suite(const RunConfig& cfg, MetricsWriter* writer = nullptr, bool fine_tune = true,
                      const std::string& variant = "");
SuiteReport run_suite(const RunConfig& cfg, const Checkpoint& ckpt, MetricsWriter* writer = nullptr,
                      bool fine_tune = true, const std::string& variant = "");

struct AblationVariant {
  std::string name;
  det::ModelConfig model;
};
// full, without CFA, and the channel-reweighting baseline in place of DRD.
std::vector<AblationVariant> ablation_variants(const det::ModelConfig& base);

// Novel AP50 of `other` subtracted from `reference`, run by run.
struct PairedDifference {
  std::string reference, other;
  std::vector<double> per_run;
  double mean = 0.0, std = 0.0;  // population std
};
PairedDifference paired_difference(const std::string& reference, const SuiteReport& a, const std::string& other,
                                   const SuiteReport& b);
std::string paired_record(const PairedDifference& d, const RunConfig& cfg);

struct AblationReport {
  std::vector<std::pair<std::string, SuiteReport>> variants;  // ablation_variants order
  std::vector<PairedDifference> differences;                  // first variant against each other one
};

// Meta-trains every ablation variant into <work_dir>/<name>.ckpt (reusing
// matching checkpoints) and runs the suite on each with the same seeds.
// `on_variant` is told before each variant's meta-training starts.
AblationReport run_ablation(const RunConfig& cfg, const std::filesystem::path& work_dir,
                            MetricsWriter* writer = nullptr,
                            const std::function<void(const std::string&, bool reused)>& on_variant = {},
                            const train::StepCallback& on_step = {});

struct GradCase {
  std::string name;
  GradCheckFn fn;
  std::vector<Tensor> inputs;
};

// Every differentiable op of the library on small seeded inputs.
std::vector<GradCase> default_gradcheck_cases(std::uint64_t seed);
std::vector<GradCheckResult> run_gradcheck_cases(const std::vector<GradCase>& cases, const GradCheckOptions& opts = {});
std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed = 7, const GradCheckOptions& opts = {});

}  // namespace dcnet::harness
