#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfu/core.hpp"

namespace cfu::eval {

enum class MapeAggregation { PerImage, Pooled };

struct EvalConfig {
  std::vector<double> iou_thresholds = default_thresholds();
  double match_iou_for_confusion = 0.50;
  int interpolation_points = 101;
  MapeAggregation mape_aggregation = MapeAggregation::PerImage;

  // 0.50, 0.55, ..., 0.95
  static std::vector<double> default_thresholds();
  void validate() const;
};

struct MatchPair {
  InstanceId prediction{};
  InstanceId gt{};
  double iou = 0;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<InstanceId> unmatched_predictions;
  std::vector<InstanceId> unmatched_gt;
};

// Greedy matching: predictions by descending score (ties by id) each claim
// the unmatched GT with the highest IoU >= threshold (same class only when
// class_aware). GT candidates are scanned in id order, first best wins.
MatchResult match_instances(std::span<const Instance> preds, std::span<const Instance> gts, double iou_threshold,
                            bool class_aware);

// One image's kept predictions and its ground truth.
struct ImageEval {
  ImageId id{};
  std::vector<Instance> preds;
  std::vector<Instance> gts;
};

// Images come from `gt_source` (optionally restricted to `splits`); kept
// predictions of `pred_source` are attached by image id.
std::vector<ImageEval> collect(const Dataset& pred_source, const Dataset& gt_source,
                               std::span<const Split> splits = {});

// Percent in [0, 100]; nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const ImageEval> images, ClassLabel c, double iou_threshold,
                                        const EvalConfig& cfg);

struct MapResult {
  std::optional<double> map_avg;
  std::vector<double> thresholds;
  std::vector<std::optional<double>> map_at;                    // per threshold
  std::array<std::vector<std::optional<double>>, 2> ap;         // [class][threshold]
};

MapResult mean_average_precision(std::span<const ImageEval> images, const EvalConfig& cfg);
MapResult mean_average_precision_serial(std::span<const ImageEval> images, const EvalConfig& cfg);

struct ClassCounts {
  std::int64_t minus = 0;
  std::int64_t plus = 0;
  std::int64_t total() const { return minus + plus; }
  std::int64_t get(std::optional<ClassLabel> c) const {
    if (!c) return total();
    return *c == ClassLabel::BVGMinus ? minus : plus;
  }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};
using CountTable = std::map<ImageId, ClassCounts>;

// Kept instances per image; every image gets a row.
CountTable count_kept(std::span<const ImageRecord> images, std::span<const Instance> instances);
CountTable count_kept(std::span<const ImageEval> images, bool predictions);

struct MapeResult {
  std::optional<double> value;  // percent
  std::size_t images_used = 0;
  std::size_t images_skipped = 0;  // ground truth count 0 for the filter
};

// PerImage: mean over images of 100 |pred - gt| / gt. Pooled: 100 sum|pred - gt| / sum gt.
// Images present in `gt` define the set; missing predictions count as 0.
MapeResult mape_counts(const CountTable& pred, const CountTable& gt, std::optional<ClassLabel> class_filter,
                       MapeAggregation agg = MapeAggregation::PerImage);

// Rows: BVG- actual, BVG+ actual, Invented. Columns: BVG- predicted,
// BVG+ predicted, Missed. cells[2][2] is undefined and stays 0.
struct ConfusionMatrix {
  static constexpr std::size_t kInvented = 2;
  static constexpr std::size_t kMissed = 2;
  std::array<std::array<std::int64_t, 3>, 3> cells{};

  std::int64_t row_total(std::size_t r) const { return cells[r][0] + cells[r][1] + (r == kInvented ? 0 : cells[r][2]); }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(std::span<const ImageEval> images, const EvalConfig& cfg);

struct NormalizedRow {
  std::array<std::optional<double>, 3> cells;  // percent of the row total
};
struct NormalizedConfusion {
  std::array<std::optional<NormalizedRow>, 3> rows;  // nullopt for zero rows
};

NormalizedConfusion normalize_confusion(const ConfusionMatrix& m);

enum class RaterKind { User, Model };

struct RaterCounts {
  std::string name;
  RaterKind kind = RaterKind::User;
  CountTable counts;
};

struct PairVariability {
  std::string reference;  // denominator
  std::string other;
  std::optional<double> total, plus, minus;
};

struct VariabilitySummary {
  std::optional<double> total, plus, minus;
  std::size_t pairs = 0;
};

struct VariabilityReport {
  std::vector<PairVariability> pairs;
  VariabilitySummary user_to_user;
  VariabilitySummary users_to_model;
};

// Pairwise MAPE for every unordered pair (earlier-named rater is the
// reference). Throws InvalidArgument for < 2 raters or differing image sets.
VariabilityReport variability_report(std::span<const RaterCounts> raters);

struct PerImageCounts {
  ImageId image{};
  ClassCounts predicted;
  ClassCounts actual;
};

struct EvalReport {
  MapResult map;
  MapeResult mape_minus;
  MapeResult mape_plus;
  MapeResult mape_total;
  ConfusionMatrix confusion;
  NormalizedConfusion confusion_normalized;
  std::vector<PerImageCounts> per_image_counts;
  std::optional<VariabilityReport> variability;
};

EvalReport evaluate(std::span<const ImageEval> images, const EvalConfig& cfg);
EvalReport evaluate_serial(std::span<const ImageEval> images, const EvalConfig& cfg);

}  // namespace cfu::eval
