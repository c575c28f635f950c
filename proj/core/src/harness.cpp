#include "dcnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "dcnet/errors.hpp"
#include "dcnet/tape.hpp"
#include "json.hpp"

namespace dcnet::harness {

using nlohmann::json;

namespace {

constexpr std::pair<Mode, const char*> kModes[] = {
    {Mode::kGradcheck, "gradcheck"}, {Mode::kOracle, "oracle"}, {Mode::kMetaTrain, "meta-train"},
    {Mode::kFineTune, "fine-tune"},  {Mode::kEval, "eval"},     {Mode::kAblate, "ablate"},
    {Mode::kExportData, "export-data"},
};

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json model_to_json(const det::ModelConfig& m) {
  return {
      {"backbone",
       {{"in_channels", m.backbone.in_channels},
        {"stage_channels", m.backbone.stage_channels},
        {"feature_dim", m.backbone.feature_dim},
        {"strict", m.backbone.strict}}},
      {"rpn",
       {{"anchor_scale", m.rpn.anchor_scale},
        {"pre_nms_top_k", m.rpn.pre_nms_top_k},
        {"nms_iou", m.rpn.nms_iou},
        {"max_proposals", m.rpn.max_proposals},
        {"positive_iou", m.rpn.positive_iou},
        {"negative_iou", m.rpn.negative_iou}}},
      {"head",
       {{"hidden", m.head.hidden},
        {"foreground_iou", m.head.foreground_iou},
        {"score_threshold", m.head.score_threshold},
        {"nms_iou", m.head.nms_iou},
        {"max_detections", m.head.max_detections}}},
      {"num_classes", m.num_classes},
      {"use_drd", m.use_drd},
      {"use_cfa", m.use_cfa},
      {"cfa_attention", m.cfa_attention},
      {"baseline_reweight", m.baseline_reweight},
  };
}

det::ModelConfig model_from_json(const json& j) {
  det::ModelConfig m;
  const auto& b = j.at("backbone");
  m.backbone.in_channels = b.at("in_channels");
  m.backbone.stage_channels = b.at("stage_channels").get<std::vector<int>>();
  m.backbone.feature_dim = b.at("feature_dim");
  m.backbone.strict = b.at("strict");
  const auto& r = j.at("rpn");
  m.rpn.anchor_scale = r.at("anchor_scale");
  m.rpn.pre_nms_top_k = r.at("pre_nms_top_k");
  m.rpn.nms_iou = r.at("nms_iou");
  m.rpn.max_proposals = r.at("max_proposals");
  m.rpn.positive_iou = r.at("positive_iou");
  m.rpn.negative_iou = r.at("negative_iou");
  const auto& h = j.at("head");
  m.head.hidden = h.at("hidden");
  m.head.foreground_iou = h.at("foreground_iou");
  m.head.score_threshold = h.at("score_threshold");
  m.head.nms_iou = h.at("nms_iou");
  m.head.max_detections = h.at("max_detections");
  m.num_classes = j.at("num_classes");
  m.use_drd = j.at("use_drd");
  m.use_cfa = j.at("use_cfa");
  m.cfa_attention = j.at("cfa_attention");
  m.baseline_reweight = j.at("baseline_reweight");
  return m;
}

json config_to_json(const RunConfig& c) {
  return {
      {"mode", mode_name(c.mode)},
      {"model", model_to_json(c.model)},
      {"dataset",
       {{"query_size", c.dataset.query_size},
        {"support_size", c.dataset.support_size},
        {"min_scale", c.dataset.min_scale},
        {"max_scale", c.dataset.max_scale},
        {"max_objects", c.dataset.max_objects},
        {"occlusion_prob", c.dataset.occlusion_prob},
        {"max_occlusion", c.dataset.max_occlusion},
        {"distractor_prob", c.dataset.distractor_prob}}},
      {"k", c.k},
      {"split", c.split_id},
      {"runs", c.num_runs},
      {"test_images", c.test_images},
      {"seed", c.seed},
      {"dataset_seed", c.dataset_seed},
      {"test_seed", c.test_seed},
      {"meta_schedule", format_schedule(c.meta_schedule)},
      {"fine_schedule", format_schedule(c.fine_schedule)},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"clip_norm", c.clip_norm},
      {"reset_classifier", c.reset_classifier},
      {"checkpoint", c.checkpoint.string()},
      {"out", c.out.string()},
  };
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::string mode_name(Mode mode) {
  for (const auto& [m, name] : kModes) {
    if (m == mode) return name;
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  std::string norm = name;
  std::replace(norm.begin(), norm.end(), '_', '-');
  for (const auto& [m, n] : kModes) {
    if (norm == n) return m;
  }
  throw ConfigError("unknown mode '" + name + "'");
}

void RunConfig::validate() const {
  model.validate();
  if (model.use_drd && model.baseline_reweight) {
    throw ConfigError("use_drd and baseline_reweight are mutually exclusive");
  }
  if (k < 1) throw ConfigError("k must be >= 1");
  if (num_runs < 1) throw ConfigError("runs must be >= 1");
  if (test_images < 1) throw ConfigError("test_images must be >= 1");
  data::SplitConfig::standard(split_id);
  train::validate_schedule(meta_schedule);
  train::validate_schedule(fine_schedule);
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (dataset.query_size % model.backbone.stride() != 0 || dataset.support_size % model.backbone.stride() != 0) {
    throw ConfigError("image sizes must be divisible by the backbone stride");
  }
}

train::TrainOptions RunConfig::meta_options() const {
  return {meta_schedule, momentum, weight_decay, clip_norm, 100};
}

train::TrainOptions RunConfig::fine_options() const {
  return {fine_schedule, momentum, weight_decay, clip_norm, 100};
}

train::LrSchedule parse_schedule(const std::string& text) {
  train::LrSchedule out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule entries look like ITERS:LR, got '" + item + "'");
    try {
      const int iters = std::stoi(item.substr(0, colon));
      const double lr = std::stod(item.substr(colon + 1));
      out.push_back({iters, lr});
    } catch (const std::logic_error&) {
      throw ConfigError("malformed schedule entry '" + item + "'");
    }
  }
  train::validate_schedule(out);
  return out;
}

std::string format_schedule(const train::LrSchedule& schedule) {
  std::string s;
  for (const auto& st : schedule) {
    if (!s.empty()) s += ',';
    s += fmt::format("{}:{}", st.iterations, st.lr);
  }
  return s;
}

std::string config_json(const RunConfig& cfg) { return config_to_json(cfg).dump(); }
std::string model_config_json(const det::ModelConfig& cfg) { return model_to_json(cfg).dump(); }

det::ModelConfig parse_model_config(const std::string& text) {
  try {
    return model_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model configuration: ") + e.what());
  }
}

void MetricsWriter::write(const std::string& line) {
  std::lock_guard lock(mu_);
  *out_ << line << '\n';
  out_->flush();
}

SuiteReport aggregate(std::vector<eval::RunMetrics> runs) {
  SuiteReport r;
  std::vector<double> novel, base;
  std::map<int, std::vector<double>> per_class;
  for (const auto& m : runs) {
    if (std::isfinite(m.mean_novel_ap)) novel.push_back(m.mean_novel_ap);
    if (std::isfinite(m.mean_base_ap)) base.push_back(m.mean_base_ap);
    for (const auto& [c, ap] : m.per_class_ap) {
      if (ap) per_class[c].push_back(*ap);
    }
  }
  r.mean_novel_ap = mean_of(novel);
  r.std_novel_ap = std_of(novel);
  r.mean_base_ap = mean_of(base);
  r.std_base_ap = std_of(base);
  for (const auto& [c, v] : per_class) r.mean_class_ap[c] = mean_of(v);
  r.runs = std::move(runs);
  return r;
}

std::string run_record(const eval::RunMetrics& m, const RunConfig& cfg, const std::string& variant) {
  json ap = json::object();
  for (const auto& [c, v] : m.per_class_ap) ap[std::to_string(c)] = v ? json(*v) : json(nullptr);
  json j = {{"record", "run"},
            {"variant", variant},
            {"run_index", m.run_index},
            {"per_class_ap50", ap},
            {"mean_novel_ap50", number_or_null(m.mean_novel_ap)},
            {"mean_base_ap50", number_or_null(m.mean_base_ap)},
            {"wall_time_s", m.wall_time_s},
            {"warnings", m.warnings},
            {"config", config_to_json(cfg)}};
  return j.dump();
}

std::string aggregate_record(const SuiteReport& r, const RunConfig& cfg, const std::string& variant) {
  json ap = json::object();
  for (const auto& [c, v] : r.mean_class_ap) ap[std::to_string(c)] = number_or_null(v);
  json j = {{"record", "aggregate"},
            {"variant", variant},
            {"runs", r.runs.size()},
            {"mean_novel_ap50", number_or_null(r.mean_novel_ap)},
            {"std_novel_ap50", number_or_null(r.std_novel_ap)},
            {"mean_base_ap50", number_or_null(r.mean_base_ap)},
            {"std_base_ap50", number_or_null(r.std_base_ap)},
            {"mean_class_ap50", ap},
            {"config", config_to_json(cfg)}};
  return j.dump();
}

eval::RunMetrics parse_run_record(const std::string& line) {
  try {
    const json j = json::parse(line);
    eval::RunMetrics m;
    m.run_index = j.at("run_index");
    for (const auto& [key, v] : j.at("per_class_ap50").items()) {
      m.per_class_ap[std::stoi(key)] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    m.mean_novel_ap = number_from(j.at("mean_novel_ap50"));
    m.mean_base_ap = number_from(j.at("mean_base_ap50"));
    m.wall_time_s = j.at("wall_time_s");
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics record: ") + e.what());
  }
}

train::TrainLog meta_train_checkpoint(const RunConfig& cfg, const std::filesystem::path& path,
                                      const train::StepCallback& on_step) {
  cfg.validate();
  det::Model model(cfg.model, cfg.seed);
  data::EpisodeSampler sampler(cfg.dataset_seed, cfg.split(), 0, cfg.dataset);
  train::TrainLog log = train::meta_train(model, sampler, cfg.meta_options(), on_step);
  const json meta = {{"model", model_to_json(cfg.model)},
                     {"split", cfg.split_id},
                     {"steps", log.losses.size()},
                     {"loss_start_avg", log.start_average},
                     {"loss_end_avg", log.end_average},
                     {"train_seconds", log.seconds},
                     {"config", config_to_json(cfg)},
                     {"meta_key", meta_train_key(cfg)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, model.store(), meta.dump());
  return log;
}

std::string meta_train_key(const RunConfig& cfg) {
  json c = config_to_json(cfg);
  for (const char* k : {"mode", "k", "runs", "test_images", "test_seed", "fine_schedule", "reset_classifier",
                        "checkpoint", "out"})
    c.erase(k);
  return c.dump();
}

std::optional<Checkpoint> reusable_checkpoint(const RunConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    Checkpoint ckpt = load_checkpoint(path);
    const json meta = json::parse(ckpt.metadata);
    if (meta.value("meta_key", std::string()) == meta_train_key(cfg)) return ckpt;
  } catch (const std::exception&) {
    // Unreadable or stale: retrain over it.
  }
  return std::nullopt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (path.empty()) throw ConfigError("no meta-trained checkpoint given (--checkpoint)");
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

std::unique_ptr<det::Model> load_model(const Checkpoint& ckpt) {
  det::ModelConfig mc;
  try {
    mc = model_from_json(json::parse(ckpt.metadata).at("model"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata lacks a model configuration: ") + e.what());
  }
  auto model = std::make_unique<det::Model>(mc, 0);
  restore_parameters(model->store(), ckpt);
  return model;
}

eval::RunMetrics evaluate(const det::Model& model, const det::SupportSet& supports,
                          std::span<const data::TestImage> test, const data::SplitConfig& split, int run_index) {
  std::vector<eval::ImageResult> results;
  results.reserve(test.size());
  for (const auto& t : test) results.push_back({model.detect(t.image, supports), t.gt});
  return eval::score_run(results, split, run_index);
}

eval::RunMetrics run_once(const RunConfig& cfg, const Checkpoint& ckpt, std::span<const data::TestImage> test,
                          int run_index, bool fine_tune) {
  const auto t0 = std::chrono::steady_clock::now();
  auto model = load_model(ckpt);
  const data::SplitConfig split = cfg.split();
  const data::ShotBudget pool = data::build_shot_pool(cfg.dataset_seed, split, cfg.k, run_index, cfg.dataset);
  const std::uint64_t run_seed = data::mix_seed(cfg.seed, static_cast<std::uint64_t>(run_index));
  if (fine_tune) {
    if (cfg.reset_classifier) {
      Rng rng(run_seed);
      model->reset_classifier(rng);
    }
    data::EpisodeSampler sampler(data::mix_seed(cfg.dataset_seed, 0xf17eULL), split, run_index, cfg.dataset);
    train::fine_tune(*model, sampler, pool, cfg.fine_options());
  }
  const det::SupportSet supports = train::class_prototypes(*model, pool, split, run_seed, cfg.dataset);
  eval::RunMetrics m = evaluate(*model, supports, test, split, run_index);
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

SuiteReport run_suite(const RunConfig& cfg, MetricsWriter* writer, bool fine_tune, const std::string& variant) {
  cfg.validate();
  return run_suite(cfg, read_checkpoint(cfg.checkpoint), writer, fine_tune, variant);
}

SuiteReport run_suite(const RunConfig& cfg, const Checkpoint& ckpt, MetricsWriter* writer, bool fine_tune,
                      const std::string& variant) {
  cfg.validate();
  const auto test = data::make_test_set(cfg.test_seed, cfg.test_images, cfg.dataset);
  std::vector<eval::RunMetrics> runs;
  for (int r = 0; r < cfg.num_runs; ++r) {
    runs.push_back(run_once(cfg, ckpt, test, r, fine_tune));
    if (writer) writer->write(run_record(runs.back(), cfg, variant));
  }
  SuiteReport report = aggregate(std::move(runs));
  if (writer) writer->write(aggregate_record(report, cfg, variant));
  return report;
}

std::vector<AblationVariant> ablation_variants(const det::ModelConfig& base) {
  det::ModelConfig full = base;
  full.use_drd = true;
  full.use_cfa = true;
  full.cfa_attention = true;
  full.baseline_reweight = false;
  det::ModelConfig no_cfa = full;
  no_cfa.use_cfa = false;
  det::ModelConfig baseline = full;
  baseline.use_drd = false;
  baseline.baseline_reweight = true;
  return {{"dcnet", full}, {"dcnet_no_cfa", no_cfa}, {"reweight_baseline", baseline}};
}

PairedDifference paired_difference(const std::string& reference, const SuiteReport& a, const std::string& other,
                                   const SuiteReport& b) {
  if (a.runs.size() != b.runs.size()) throw InvalidArgument("paired_difference: run counts differ");
  PairedDifference d{reference, other, {}, 0.0, 0.0};
  for (std::size_t i = 0; i < a.runs.size(); ++i) d.per_run.push_back(a.runs[i].mean_novel_ap - b.runs[i].mean_novel_ap);
  if (d.per_run.empty()) return d;
  const double n = static_cast<double>(d.per_run.size());
  d.mean = std::accumulate(d.per_run.begin(), d.per_run.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d.per_run) ss += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(ss / n);
  return d;
}

std::string paired_record(const PairedDifference& d, const RunConfig& cfg) {
  json per_run = json::array();
  for (double v : d.per_run) per_run.push_back(number_or_null(v));
  json j = {{"record", "paired_difference"},
            {"reference", d.reference},
            {"other", d.other},
            {"per_run_novel_ap50_diff", per_run},
            {"mean_diff", number_or_null(d.mean)},
            {"std_diff", number_or_null(d.std)},
            {"config", config_to_json(cfg)}};
  return j.dump();
}

AblationReport run_ablation(const RunConfig& cfg, const std::filesystem::path& work_dir, MetricsWriter* writer,
                            const std::function<void(const std::string&, bool)>& on_variant,
                            const train::StepCallback& on_step) {
  cfg.validate();
  AblationReport report;
  for (const auto& v : ablation_variants(cfg.model)) {
    RunConfig vc = cfg;
    vc.model = v.model;
    vc.checkpoint = work_dir / (v.name + ".ckpt");
    std::optional<Checkpoint> ckpt = reusable_checkpoint(vc, vc.checkpoint);
    if (on_variant) on_variant(v.name, ckpt.has_value());
    if (!ckpt) {
      meta_train_checkpoint(vc, vc.checkpoint, on_step);
      ckpt = load_checkpoint(vc.checkpoint);
    }
    report.variants.emplace_back(v.name, run_suite(vc, *ckpt, writer, true, v.name));
  }
  const auto& [ref_name, ref] = report.variants.front();
  for (std::size_t i = 1; i < report.variants.size(); ++i) {
    report.differences.push_back(
        paired_difference(ref_name, ref, report.variants[i].first, report.variants[i].second));
    if (writer) writer->write(paired_record(report.differences.back(), cfg));
  }
  return report;
}

std::vector<GradCheckResult> run_gradcheck_cases(const std::vector<GradCase>& cases, const GradCheckOptions& opts) {
  std::vector<GradCheckResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(gradcheck(c.name, c.fn, c.inputs, opts));
  return out;
}

std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed, const GradCheckOptions& opts) {
  return run_gradcheck_cases(default_gradcheck_cases(seed), opts);
}

}  // namespace dcnet::harness
