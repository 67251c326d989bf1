#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "cfu/core.hpp"
#include "cfu/kv_config.hpp"

namespace cfu::postproc {

struct PostProcConfig {
  double score_threshold = 0.70;    // exclude score < threshold
  double dup_iou_threshold = 0.70;  // cross-class pairs with IoU >= threshold
  double ellipse_shrink = 0.98;     // semi-axis scale of the dish ellipse
  double laplace_ci = 0.99;         // central coverage of the area band
  int min_instances_for_area_filter = 5;

  // Throws InvalidArgument naming the first offending field.
  void validate() const;

  auto key() const { return std::tie(score_threshold, dup_iou_threshold, ellipse_shrink, laplace_ci); }
  friend bool operator==(const PostProcConfig&, const PostProcConfig&) = default;
};

// Unknown keys are rejected; missing keys keep `base` values.
PostProcConfig config_from_key_values(const KeyValues& kv, PostProcConfig base = {});
std::string to_key_values(const PostProcConfig& cfg);

struct LaplaceParams {
  double mu = 0;  // location, pixels^2
  double b = 1;   // scale, pixels^2
};

// Each stage only looks at kept, model-origin instances and only sets flags.
std::vector<Instance> filter_by_score(std::vector<Instance> instances, const PostProcConfig& cfg);
std::vector<Instance> resolve_cross_class_duplicates(std::vector<Instance> instances, const PostProcConfig& cfg);
std::vector<Instance> filter_by_dish(std::vector<Instance> instances, const std::optional<EllipseModel>& ellipse,
                                     const PostProcConfig& cfg);
std::vector<Instance> filter_area_outliers(std::vector<Instance> instances, const PostProcConfig& cfg,
                                           std::optional<LaplaceParams>* fitted = nullptr);

// Maximum-likelihood Laplace fit: mu = median, b = mean |x - mu|.
// Throws InvalidArgument for < 2 values or zero deviation.
LaplaceParams fit_laplace(std::span<const double> areas);
double laplace_quantile(const LaplaceParams& p, double q);

struct PipelineResult {
  std::vector<Instance> instances;
  std::optional<LaplaceParams> laplace;
  EllipseModel ellipse_used;
};

// Stages 1 -> 4 in order. Throws MissingEllipse when the image has no
// dish ellipse.
PipelineResult run_pipeline(const ImageRecord& image, std::vector<Instance> instances, const PostProcConfig& cfg);

// Pipeline over every image of a dataset (predictions only), results in
// image order. Images are processed in parallel; the serial variant is the
// reference.
std::vector<PipelineResult> run_dataset(const Dataset& d, const PostProcConfig& cfg);
std::vector<PipelineResult> run_dataset_serial(const Dataset& d, const PostProcConfig& cfg);

// Writes pipeline flags back into d.predictions.
void apply_results(Dataset& d, const std::vector<PipelineResult>& results);

using ReasonCounts = std::array<std::size_t, kExclusionReasonCount>;
ReasonCounts count_reasons(std::span<const Instance> instances);

}  // namespace cfu::postproc
