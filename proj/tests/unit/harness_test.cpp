#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "dcnet/errors.hpp"
#include "dcnet/harness.hpp"
#include "dcnet/ops.hpp"
#include "test_util.hpp"

namespace dcnet::harness {
namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.model.backbone.stage_channels = {8, 8, 16};
  cfg.model.backbone.feature_dim = 16;
  cfg.model.head.hidden = 24;
  cfg.meta_schedule = {{6, 0.005}};
  cfg.fine_schedule = {{3, 0.005}, {2, 0.0005}};
  cfg.test_images = 6;
  cfg.num_runs = 2;
  cfg.k = 1;
  return cfg;
}

eval::RunMetrics metrics(int run, double novel, double base) {
  eval::RunMetrics m;
  m.run_index = run;
  m.per_class_ap = {{0, novel}, {1, base}, {2, std::nullopt}};
  m.mean_novel_ap = novel;
  m.mean_base_ap = base;
  m.wall_time_s = 0.125 * run + 1.0 / 3.0;
  m.warnings = {"class 2 absent"};
  return m;
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

TEST(Modes, ParseAcceptsBothSpellings) {
  EXPECT_EQ(parse_mode("meta-train"), Mode::kMetaTrain);
  EXPECT_EQ(parse_mode("meta_train"), Mode::kMetaTrain);
  EXPECT_EQ(parse_mode("export-data"), Mode::kExportData);
  EXPECT_EQ(mode_name(Mode::kFineTune), "fine-tune");
  EXPECT_THROW(parse_mode("train"), ConfigError);
}

TEST(Schedule, ParseAndFormat) {
  auto s = parse_schedule("5000:0.005,1000:0.0005");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].iterations, 5000);
  EXPECT_EQ(s[1].lr, 0.0005);
  EXPECT_EQ(format_schedule(s), "5000:0.005,1000:0.0005");
  EXPECT_EQ(train::total_steps(s), 6000);
  EXPECT_EQ(train::lr_at(s, 4999), 0.005);
  EXPECT_EQ(train::lr_at(s, 5000), 0.0005);
  EXPECT_THROW(parse_schedule(""), ConfigError);
  EXPECT_THROW(parse_schedule("100"), ConfigError);
  EXPECT_THROW(parse_schedule("100:-1"), ConfigError);
  EXPECT_THROW(parse_schedule("x:0.1"), ConfigError);
  EXPECT_THROW(parse_schedule("0:0.1"), ConfigError);
}

TEST(RunConfigTest, Validation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.model.baseline_reweight = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c.model.use_drd = false;
  EXPECT_NO_THROW(c.validate());
  c = RunConfig{};
  c.split_id = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.num_runs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.dataset.query_size = 90;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.fine_schedule.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfigJson, RoundTrip) {
  det::ModelConfig m;
  m.backbone.stage_channels = {4, 12};
  m.backbone.feature_dim = 24;
  m.rpn.max_proposals = 17;
  m.head.score_threshold = 0.125;
  m.use_cfa = false;
  const det::ModelConfig back = parse_model_config(model_config_json(m));
  EXPECT_EQ(model_config_json(back), model_config_json(m));
  EXPECT_EQ(back.backbone.stage_channels, m.backbone.stage_channels);
  EXPECT_FALSE(back.use_cfa);
  EXPECT_THROW(parse_model_config("{\"num_classes\": 3}"), ConfigError);
}

TEST(Aggregate, MeanAndPopulationStd) {
  std::vector<eval::RunMetrics> runs;
  std::vector<double> novel;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < 10; ++r) {
    novel.push_back(u(rng));
    runs.push_back(metrics(r, novel.back(), u(rng)));
  }
  SuiteReport rep = aggregate(runs);
  const double mean = std::accumulate(novel.begin(), novel.end(), 0.0) / 10.0;
  EXPECT_NEAR(rep.mean_novel_ap, mean, 1e-12);
  double var = 0.0;
  for (double v : novel) var += (v - mean) * (v - mean);
  EXPECT_NEAR(rep.std_novel_ap, std::sqrt(var / 10.0), 1e-12);
  EXPECT_EQ(rep.mean_class_ap.count(2), 0u);
  EXPECT_NEAR(rep.mean_class_ap.at(0), mean, 1e-12);
}

TEST(Aggregate, SingleRunHasZeroStd) {
  SuiteReport rep = aggregate({metrics(0, 0.4, 0.7)});
  EXPECT_EQ(rep.mean_novel_ap, 0.4);
  EXPECT_EQ(rep.std_novel_ap, 0.0);
  EXPECT_EQ(rep.mean_base_ap, 0.7);
  EXPECT_EQ(rep.std_base_ap, 0.0);
}

TEST(Records, RunRecordRoundTripsLosslessly) {
  RunConfig cfg;
  eval::RunMetrics m = metrics(4, 0.1 + 0.2, 2.0 / 7.0);
  eval::RunMetrics undefined = metrics(5, NAN, 0.5);
  undefined.per_class_ap[0] = std::nullopt;
  for (const auto& src : {m, undefined}) {
    const std::string line = run_record(src, cfg, "dcnet");
    EXPECT_EQ(line.find('\n'), std::string::npos);
    eval::RunMetrics back = parse_run_record(line);
    EXPECT_EQ(back.run_index, src.run_index);
    EXPECT_EQ(back.per_class_ap, src.per_class_ap);
    EXPECT_EQ(back.mean_base_ap, src.mean_base_ap);
    EXPECT_EQ(std::isnan(back.mean_novel_ap), std::isnan(src.mean_novel_ap));
    if (!std::isnan(src.mean_novel_ap)) {
      EXPECT_EQ(back.mean_novel_ap, src.mean_novel_ap);
    }
    EXPECT_EQ(back.wall_time_s, src.wall_time_s);
    EXPECT_EQ(back.warnings, src.warnings);
    EXPECT_EQ(run_record(back, cfg, "dcnet"), line);
  }
  EXPECT_THROW(parse_run_record("{\"record\":\"run\"}"), ConfigError);
  EXPECT_THROW(parse_run_record("not json"), ConfigError);
}

TEST(Records, ConfigEchoedInEveryRecord) {
  RunConfig cfg;
  cfg.k = 3;
  const std::string echo = config_json(cfg);
  EXPECT_NE(echo.find("\"k\":3"), std::string::npos);
  EXPECT_NE(run_record(metrics(0, 0.5, 0.5), cfg).find(echo), std::string::npos);
  EXPECT_NE(aggregate_record(aggregate({metrics(0, 0.5, 0.5)}), cfg).find(echo), std::string::npos);
}

TEST(Writer, OneLinePerRecord) {
  std::ostringstream out;
  MetricsWriter w(out);
  w.write("{\"a\":1}");
  w.write("{\"b\":2}");
  EXPECT_EQ(out.str(), "{\"a\":1}\n{\"b\":2}\n");
}

TEST(Gradcheck, AllOpsPassAndReportIsStable) {
  auto a = gradcheck_all(7);
  auto b = gradcheck_all(7);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_GE(a.size(), 40u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].passed) << a[i].name << " rel " << a[i].max_rel_error;
    EXPECT_LE(a[i].max_rel_error, 1e-4) << a[i].name;
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].max_rel_error, b[i].max_rel_error);
    EXPECT_EQ(a[i].probes, b[i].probes);
  }
}

TEST(Gradcheck, FaultInjectionFlagsOnlyThatOp) {
  auto cases = default_gradcheck_cases(7);
  bool replaced = false;
  for (auto& c : cases) {
    if (c.name != "relu") continue;
    // relu whose backward lets gradient through negative inputs as well.
    c.fn = [](const std::vector<Tensor>& in) {
      const Tensor& x = in[0];
      std::vector<double> v(x.data().begin(), x.data().end());
      for (double& e : v) e = std::max(e, 0.0);
      return make_op("relu", x.shape(), std::move(v), {x}, [](BackwardContext& ctx) {
        auto g = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output()[i];
      });
    };
    replaced = true;
  }
  ASSERT_TRUE(replaced);
  std::vector<std::string> failed;
  for (const auto& r : run_gradcheck_cases(cases))
    if (!r.passed) failed.push_back(r.name);
  EXPECT_EQ(failed, std::vector<std::string>{"relu"});
}

TEST(Suite, MissingCheckpointIsConfigError) {
  RunConfig cfg = tiny_run();
  EXPECT_THROW(run_suite(cfg), ConfigError);
  cfg.checkpoint = temp_path("dcnet_no_such_checkpoint.ckpt");
  std::filesystem::remove(cfg.checkpoint);
  EXPECT_THROW(run_suite(cfg), ConfigError);
}

TEST(Suite, MetadataWithoutModelIsConfigError) {
  Checkpoint ckpt;
  ckpt.metadata = "{}";
  EXPECT_THROW(load_model(ckpt), ConfigError);
  ckpt.metadata = "garbage";
  EXPECT_THROW(load_model(ckpt), ConfigError);
}

class TinySuite : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    path_ = temp_path("dcnet_harness_tiny.ckpt");
    log_ = meta_train_checkpoint(tiny_run(), path_);
  }
  static void TearDownTestSuite() { std::filesystem::remove(path_); }

  static inline std::filesystem::path path_;
  static inline train::TrainLog log_;
};

TEST_F(TinySuite, CheckpointCarriesModelAndLoss) {
  EXPECT_EQ(log_.losses.size(), 6u);
  for (double l : log_.losses) EXPECT_TRUE(std::isfinite(l));
  Checkpoint ckpt = read_checkpoint(path_);
  auto model = load_model(ckpt);
  EXPECT_EQ(model->config().backbone.feature_dim, 16);
  EXPECT_NE(ckpt.metadata.find("loss_start_avg"), std::string::npos);
}

TEST_F(TinySuite, IdenticalSeedsGiveIdenticalMetrics) {
  RunConfig cfg = tiny_run();
  cfg.checkpoint = path_;
  std::ostringstream out;
  MetricsWriter w(out);
  SuiteReport a = run_suite(cfg, &w, true, "dcnet");
  SuiteReport b = run_suite(cfg);
  ASSERT_EQ(a.runs.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(a.runs[r].per_class_ap, b.runs[r].per_class_ap);
    EXPECT_EQ(a.runs[r].run_index, static_cast<int>(r));
  }
  std::istringstream lines(out.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    EXPECT_NE(line.find("\"variant\":\"dcnet\""), std::string::npos);
  }
  EXPECT_EQ(count, 3);
}

TEST_F(TinySuite, EvalIsBitReproducible) {
  RunConfig cfg = tiny_run();
  const Checkpoint ckpt = read_checkpoint(path_);
  const auto test = data::make_test_set(cfg.test_seed, cfg.test_images, cfg.dataset);
  auto model = load_model(ckpt);
  const auto pool = data::build_shot_pool(cfg.dataset_seed, cfg.split(), 1, 0);
  const auto s1 = train::class_prototypes(*model, pool, cfg.split(), 5);
  const auto s2 = train::class_prototypes(*model, pool, cfg.split(), 5);
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto a = model->detect(test[i].image, s1), b = model->detect(test[i].image, s2);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      EXPECT_EQ(a[j].score, b[j].score);
      EXPECT_EQ(a[j].box.x1, b[j].box.x1);
    }
  }
  auto m1 = run_once(cfg, ckpt, test, 0, false), m2 = run_once(cfg, ckpt, test, 0, false);
  EXPECT_EQ(m1.per_class_ap, m2.per_class_ap);
}

TEST_F(TinySuite, SingleRunAggregateEqualsTheRun) {
  RunConfig cfg = tiny_run();
  cfg.checkpoint = path_;
  cfg.num_runs = 1;
  SuiteReport r = run_suite(cfg, nullptr, false);
  ASSERT_EQ(r.runs.size(), 1u);
  if (std::isfinite(r.runs[0].mean_novel_ap)) {
    EXPECT_EQ(r.mean_novel_ap, r.runs[0].mean_novel_ap);
    EXPECT_EQ(r.std_novel_ap, 0.0);
  }
}

TEST(Ablation, VariantsDifferOnlyInToggles) {
  auto v = ablation_variants(det::ModelConfig{});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_TRUE(v[0].model.use_drd && v[0].model.use_cfa && v[0].model.cfa_attention);
  EXPECT_FALSE(v[1].model.use_cfa);
  EXPECT_TRUE(v[1].model.use_drd);
  EXPECT_FALSE(v[2].model.use_drd);
  EXPECT_TRUE(v[2].model.baseline_reweight);
  for (const auto& x : v) EXPECT_NO_THROW(x.model.validate());
}

}  // namespace
}  // namespace dcnet::harness
