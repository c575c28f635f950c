#include "dcnet/episodes.hpp"

#include <algorithm>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <set>

#include "dcnet/errors.hpp"
#include "dcnet/image_io.hpp"

namespace dcnet::data {

namespace {

Tensor box_mask(std::span<const RoIBox> boxes, int size) {
  std::vector<double> m(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      for (const auto& b : boxes) {
        if (cx >= b.x1 && cx <= b.x2 && cy >= b.y1 && cy <= b.y2) {
          m[static_cast<std::size_t>(y * size + x)] = 1.0;
          break;
        }
      }
    }
  }
  return Tensor(Shape{1, size, size}, std::move(m));
}

bool boxes_touch(const RoIBox& a, const RoIBox& b) {
  return std::min(a.x2, b.x2) - std::max(a.x1, b.x1) > -1.0 && std::min(a.y2, b.y2) - std::max(a.y1, b.y1) > -1.0;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

TestImage render_query(std::span<const ShapeSpec> specs, Rng& rng, const DatasetConfig& cfg) {
  std::bernoulli_distribution occl(cfg.occlusion_prob);
  const bool occlusion = specs.size() > 1 && occl(rng);
  auto placed = place_shapes(specs, cfg.query_size, occlusion, cfg.max_occlusion, rng);
  auto r = render_image(placed, cfg.query_size, rng());
  return {std::move(r.pixels), std::move(r.boxes)};
}

void write_csv_row(std::ofstream& out, const std::string& id, const RoIBox& b) {
  out << fmt::format("{},{},{},{},{},{}\n", id, b.class_id.value_or(-1), b.x1, b.y1, b.x2, b.y2);
}

}  // namespace

SplitConfig SplitConfig::standard(int split_id) {
  if (split_id < 0 || split_id > 2) throw ConfigError(fmt::format("split must be 0, 1 or 2, got {}", split_id));
  SplitConfig s;
  s.split_id = split_id;
  for (int c = 0; c < kNumShapeClasses; ++c) {
    (c % 3 == split_id ? s.novel_classes : s.base_classes).push_back(c);
  }
  return s;
}

std::vector<int> SplitConfig::all_classes() const {
  std::vector<int> all = base_classes;
  all.insert(all.end(), novel_classes.begin(), novel_classes.end());
  std::sort(all.begin(), all.end());
  return all;
}

bool SplitConfig::is_novel(int class_id) const {
  return std::find(novel_classes.begin(), novel_classes.end(), class_id) != novel_classes.end();
}

void SplitConfig::validate() const {
  std::set<int> seen;
  for (int c : all_classes()) {
    if (c < 0 || c >= kNumShapeClasses) throw ConfigError(fmt::format("class {} out of range", c));
    if (!seen.insert(c).second) throw ConfigError(fmt::format("class {} is both base and novel", c));
  }
  if (static_cast<int>(seen.size()) != kNumShapeClasses) throw ConfigError("split does not cover all classes");
  if (base_classes.empty() || novel_classes.empty()) throw ConfigError("split needs base and novel classes");
}

std::size_t ShotBudget::size() const {
  std::size_t n = 0;
  for (const auto& [c, v] : instances) n += v.size();
  return n;
}

std::uint64_t ShotBudget::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [c, specs] : instances) {
    feed(&c, sizeof c);
    for (const auto& s : specs) {
      feed(&s.class_id, sizeof s.class_id);
      feed(s.color.data(), sizeof(double) * 3);
      feed(&s.texture_seed, sizeof s.texture_seed);
      feed(&s.size, sizeof s.size);
    }
  }
  return h;
}

ShapeSpec random_shape(int class_id, Rng& rng, const DatasetConfig& cfg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ShapeSpec s;
  s.class_id = class_id;
  for (double& c : s.color) c = 0.2 + 0.8 * u(rng);
  const double peak = std::max({s.color[0], s.color[1], s.color[2]});
  const double target = 0.75 + 0.25 * u(rng);
  for (double& c : s.color) c *= target / peak;
  s.texture_seed = rng();
  s.size = cfg.query_size * (cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u(rng));
  s.allow_occlusion = true;
  return s;
}

ShotBudget build_shot_pool(std::uint64_t dataset_seed, const SplitConfig& split, int k, int run_index,
                           const DatasetConfig& cfg) {
  if (k < 1) throw InvalidArgument("build_shot_pool: k must be >= 1");
  split.validate();
  ShotBudget pool;
  pool.k = k;
  pool.run_index = run_index;
  const std::uint64_t run_seed = mix_seed(dataset_seed, 0x5107ULL + static_cast<std::uint64_t>(run_index));
  for (int c : split.all_classes()) {
    Rng rng(mix_seed(run_seed, static_cast<std::uint64_t>(c)));
    auto& list = pool.instances[c];
    for (int i = 0; i < k; ++i) list.push_back(random_shape(c, rng, cfg));
  }
  return pool;
}

SupportPair make_support(const ShapeSpec& spec, std::span<const int> clutter, Rng& rng, const DatasetConfig& cfg) {
  const int side = cfg.support_size;
  std::vector<PlacedShape> placed{{spec, 0.5 * side, 0.5 * side}};
  const RoIBox main_box = shape_box(placed[0], side);
  std::bernoulli_distribution distract(cfg.distractor_prob);
  if (!clutter.empty() && distract(rng)) {
    std::uniform_int_distribution<std::size_t> which(0, clutter.size() - 1);
    ShapeSpec d = random_shape(clutter[which(rng)], rng, cfg);
    d.size = std::min(d.size, 0.3 * side);
    std::uniform_real_distribution<double> pos(0.5 * d.size, side - 0.5 * d.size);
    for (int t = 0; t < 50; ++t) {
      PlacedShape cand{d, pos(rng), pos(rng)};
      if (!boxes_touch(shape_box(cand, side), main_box)) {
        placed.push_back(cand);
        break;
      }
    }
  }
  auto r = render_image(placed, side, rng());
  SupportPair pair;
  pair.class_id = spec.class_id;
  pair.image = std::move(r.pixels);
  pair.boxes = {r.boxes[0]};
  pair.mask = box_mask(pair.boxes, side);
  return pair;
}

Episode sample_episode(Rng& rng, const SplitConfig& split, Phase phase, const ShotBudget* budget,
                       const DatasetConfig& cfg) {
  Episode ep;
  if (phase == Phase::kMetaTrain) {
    std::vector<int> base = split.base_classes;
    std::sort(base.begin(), base.end());
    std::uniform_int_distribution<int> count(1, cfg.max_objects);
    std::vector<ShapeSpec> specs;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) specs.push_back(random_shape(pick(base, rng), rng, cfg));
    auto q = render_query(specs, rng, cfg);
    ep.query = std::move(q.image);
    ep.gt = std::move(q.gt);
    for (int c : base) {
      std::vector<int> clutter;
      for (int o : base)
        if (o != c) clutter.push_back(o);
      ep.supports.push_back(make_support(random_shape(c, rng, cfg), clutter, rng, cfg));
    }
    return ep;
  }

  if (budget == nullptr) throw ConfigError("fine-tune episodes need a shot pool");
  const auto classes = split.all_classes();
  std::vector<const ShapeSpec*> all;
  for (int c : classes) {
    auto it = budget->instances.find(c);
    if (it == budget->instances.end() || it->second.empty()) {
      throw ConfigError(fmt::format("shot pool has no instances of class {}", c));
    }
    for (const auto& s : it->second) all.push_back(&s);
  }
  std::uniform_int_distribution<int> count(1, std::min<int>(3, static_cast<int>(all.size())));
  const int m = count(rng);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<ShapeSpec> specs;
  for (int i = 0; i < m; ++i) specs.push_back(*all[static_cast<std::size_t>(i)]);
  auto q = render_query(specs, rng, cfg);
  ep.query = std::move(q.image);
  ep.gt = std::move(q.gt);
  for (int c : classes) {
    ep.supports.push_back(make_support(pick(budget->instances.at(c), rng), {}, rng, cfg));
  }
  return ep;
}

EpisodeSampler::EpisodeSampler(std::uint64_t dataset_seed, SplitConfig split, int run_index, DatasetConfig cfg)
    : split_(std::move(split)),
      cfg_(cfg),
      rng_(mix_seed(mix_seed(dataset_seed, static_cast<std::uint64_t>(split_.split_id)),
                    static_cast<std::uint64_t>(run_index))) {
  split_.validate();
}

Episode EpisodeSampler::next(Phase phase, const ShotBudget* budget) {
  return sample_episode(rng_, split_, phase, budget, cfg_);
}

TestImage make_test_image(std::uint64_t test_seed, int index, const DatasetConfig& cfg) {
  Rng rng(mix_seed(test_seed ^ 0x7e57ULL, static_cast<std::uint64_t>(index)));
  std::uniform_int_distribution<int> count(1, cfg.max_objects);
  std::uniform_int_distribution<int> cls(0, kNumShapeClasses - 1);
  std::vector<ShapeSpec> specs;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) specs.push_back(random_shape(cls(rng), rng, cfg));
  return render_query(specs, rng, cfg);
}

std::vector<TestImage> make_test_set(std::uint64_t test_seed, int count, const DatasetConfig& cfg) {
  std::vector<TestImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_test_image(test_seed, i, cfg));
  return out;
}

void export_dataset(const std::filesystem::path& dir, const SplitConfig& split, const ExportOptions& opts,
                    const DatasetConfig& cfg) {
  namespace fs = std::filesystem;
  for (const char* sub : {"train", "pool", "test"}) fs::create_directories(dir / sub);

  EpisodeSampler sampler(opts.dataset_seed, split, opts.run_index, cfg);
  {
    std::ofstream csv(dir / "train" / "annotations.csv");
    csv << "image_id,class_id,x1,y1,x2,y2\n";
    for (int i = 0; i < opts.train_images; ++i) {
      const Episode ep = sampler.next(Phase::kMetaTrain);
      const std::string id = fmt::format("{:06}", i);
      io::write_ppm(dir / "train" / (id + ".ppm"), ep.query);
      for (const auto& b : ep.gt) write_csv_row(csv, id, b);
    }
  }
  {
    const ShotBudget pool = build_shot_pool(opts.dataset_seed, split, opts.k, opts.run_index, cfg);
    Rng rng(mix_seed(opts.dataset_seed, 0xe4b0ULL));
    std::ofstream csv(dir / "pool" / "annotations.csv");
    csv << "image_id,class_id,x1,y1,x2,y2\n";
    for (const auto& [c, specs] : pool.instances) {
      for (std::size_t i = 0; i < specs.size(); ++i) {
        const SupportPair pair = make_support(specs[i], {}, rng, cfg);
        const std::string id = fmt::format("c{:02}_{:02}", c, i);
        io::write_ppm(dir / "pool" / (id + ".ppm"), pair.image);
        io::write_pgm(dir / "pool" / (id + "_mask.pgm"), pair.mask);
        for (const auto& b : pair.boxes) write_csv_row(csv, id, b);
      }
    }
  }
  {
    std::ofstream csv(dir / "test" / "annotations.csv");
    csv << "image_id,class_id,x1,y1,x2,y2\n";
    for (int i = 0; i < opts.test_images; ++i) {
      const TestImage t = make_test_image(opts.test_seed, i, cfg);
      const std::string id = fmt::format("{:06}", i);
      io::write_ppm(dir / "test" / (id + ".ppm"), t.image);
      for (const auto& b : t.gt) write_csv_row(csv, id, b);
    }
  }
}

}  // namespace dcnet::data
