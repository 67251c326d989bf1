#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "cfu/core.hpp"
#include "cfu/image.hpp"

namespace cfu::synth {

// Rates are per ground-truth colony. The planted-violation rates
// (low_score, duplicate, border, dust) give round(rate * n_colonies)
// plants each; the others are independent Bernoulli draws.
struct Perturbation {
  double drop_rate = 0;
  double false_positive_rate = 0;
  double jitter_px = 0;
  double score_noise = 0;
  double dust_rate = 0;
  double border_rate = 0;
  double class_flip_rate = 0;
  double low_score_rate = 0;
  double duplicate_rate = 0;
};

// The mixed plant rates used by the command-line default and the
// precision/recall suite.
Perturbation planted_perturbation();

struct SynthConfig {
  std::uint64_t seed = 0;
  std::uint32_t width = 512;
  std::uint32_t height = 512;
  std::optional<EllipseModel> dish;  // nullopt: drawn from the seed
  int n_colonies = 60;
  double class_ratio = 401.0 / 485.0;  // BVG+ fraction
  double radius_min = 6;
  double radius_max = 9;
  double overlap_cap = 0;  // max shared fraction of a colony's pixels
  Perturbation perturbation;
  // Plants sit just past the default thresholds, and neighbouring grid
  // values of each rule produce errors on clean colonies.
  bool near_threshold = false;
  Split split = Split::Unsplit;

  void validate() const;
};

struct SynthCase {
  GrayImage image;
  ImageRecord record;
  std::vector<Instance> ground_truth;
  std::vector<Instance> predictions;
  std::map<InstanceId, ExclusionReason> planted_violations;
};

// Instance ids start at first_instance_id (ground truth first). Throws
// InvalidArgument when the colonies cannot be packed.
SynthCase generate_case(const SynthConfig& cfg, ImageId image_id = ImageId{1},
                        std::int64_t first_instance_id = 1);

struct SynthDataset {
  Dataset dataset;
  std::vector<GrayImage> images;  // aligned with dataset.images
  std::map<InstanceId, ExclusionReason> planted_violations;
};

// Image i uses a seed derived from (cfg.seed, i) and a 65/15/20
// train/val/test split by index.
SynthDataset generate_dataset(const SynthConfig& cfg, int n_images);

Split split_for_index(int index, int n_images);

// Eight near-threshold images, two per rule, alternating train/val. Under
// the default config every image is counted exactly; any other value of a
// rule's parameter in the default search grid miscounts that rule's images.
SynthDataset search_fixture(std::uint64_t seed);

// dataset.json, planted.json and images/<id>.pgm.
void write_dataset_dir(const SynthDataset& s, const std::filesystem::path& dir);

}  // namespace cfu::synth
