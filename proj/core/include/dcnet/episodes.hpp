#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dcnet/boxes.hpp"
#include "dcnet/parameters.hpp"
#include "dcnet/shapes.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet::data {

struct SplitConfig {
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
  int split_id = 0;

  // Rotating splits 0-2: split s holds out classes {s, s+3, s+6, s+9}.
  static SplitConfig standard(int split_id);
  std::vector<int> all_classes() const;  // sorted base + novel
  bool is_novel(int class_id) const;
  void validate() const;  // throws ConfigError
};

struct DatasetConfig {
  int query_size = 96;
  int support_size = 64;
  double min_scale = 0.15;  // shape side as a fraction of the query side
  double max_scale = 0.32;
  int max_objects = 5;
  double occlusion_prob = 0.3;
  double max_occlusion = 0.5;
  double distractor_prob = 0.3;
};

struct SupportPair {
  int class_id = 0;
  Tensor image;  // [3,S,S]
  Tensor mask;   // [1,S,S]
  std::vector<RoIBox> boxes;  // this class's boxes in the support image
};

struct Episode {
  Tensor query;  // [3,H,W]
  std::vector<RoIBox> gt;
  std::vector<SupportPair> supports;  // one per class, ascending class id
};

struct ShotBudget {
  int k = 0;
  int run_index = 0;
  std::map<int, std::vector<ShapeSpec>> instances;  // class -> exactly k specs

  std::size_t size() const;
  std::uint64_t hash() const;
};

// k instances for every class of the split (base and novel), fixed for a run.
ShotBudget build_shot_pool(std::uint64_t dataset_seed, const SplitConfig& split, int k, int run_index,
                           const DatasetConfig& cfg = {});

enum class Phase { kMetaTrain, kFineTune };

ShapeSpec random_shape(int class_id, Rng& rng, const DatasetConfig& cfg);

// Support image with `spec` centered, optional distractors from `clutter`
// classes; the mask covers only `spec`'s box.
SupportPair make_support(const ShapeSpec& spec, std::span<const int> clutter, Rng& rng, const DatasetConfig& cfg);

Episode sample_episode(Rng& rng, const SplitConfig& split, Phase phase, const ShotBudget* budget,
                       const DatasetConfig& cfg = {});

// Per-run episode stream; reproducible from (dataset_seed, split_id, run_index).
class EpisodeSampler {
 public:
  EpisodeSampler(std::uint64_t dataset_seed, SplitConfig split, int run_index, DatasetConfig cfg = {});
  Episode next(Phase phase, const ShotBudget* budget = nullptr);
  const SplitConfig& split() const { return split_; }

 private:
  SplitConfig split_;
  DatasetConfig cfg_;
  Rng rng_;
};

struct TestImage {
  Tensor image;
  std::vector<RoIBox> gt;
};

// Held-out evaluation images over all classes, independent of the training
// streams. Image i depends only on (test_seed, i).
std::vector<TestImage> make_test_set(std::uint64_t test_seed, int count, const DatasetConfig& cfg = {});
TestImage make_test_image(std::uint64_t test_seed, int index, const DatasetConfig& cfg = {});

// Writes <dir>/{train,pool,test}/ with PPM images, PGM masks and
// annotations.csv (image_id,class_id,x1,y1,x2,y2).
struct ExportOptions {
  std::uint64_t dataset_seed = 0;
  std::uint64_t test_seed = 0;
  int run_index = 0;
  int k = 5;
  int train_images = 32;
  int test_images = 32;
};
void export_dataset(const std::filesystem::path& dir, const SplitConfig& split, const ExportOptions& opts,
                    const DatasetConfig& cfg = {});

}  // namespace dcnet::data
