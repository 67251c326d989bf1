#include "cfu/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "cfu/error.hpp"
#include "cfu/parallel.hpp"

namespace cfu::postproc {

namespace {

bool active(const Instance& inst) { return inst.origin == Origin::Model && inst.kept(); }

}  // namespace

void PostProcConfig::validate() const {
  auto fail = [](const char* field, double v, const char* range) {
    throw InvalidArgument(fmt::format("{} = {} must be in {}", field, v, range));
  };
  if (!(score_threshold >= 0 && score_threshold <= 1)) fail("score_threshold", score_threshold, "[0, 1]");
  if (!(dup_iou_threshold > 0 && dup_iou_threshold <= 1)) fail("dup_iou_threshold", dup_iou_threshold, "(0, 1]");
  if (!(ellipse_shrink > 0 && ellipse_shrink <= 1)) fail("ellipse_shrink", ellipse_shrink, "(0, 1]");
  if (!(laplace_ci > 0 && laplace_ci < 1)) fail("laplace_ci", laplace_ci, "(0, 1)");
  if (min_instances_for_area_filter < 3) {
    fail("min_instances_for_area_filter", min_instances_for_area_filter, "[3, inf)");
  }
}

PostProcConfig config_from_key_values(const KeyValues& kv, PostProcConfig cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "score_threshold") {
      cfg.score_threshold = parse_double(key, value);
    } else if (key == "dup_iou_threshold") {
      cfg.dup_iou_threshold = parse_double(key, value);
    } else if (key == "ellipse_shrink") {
      cfg.ellipse_shrink = parse_double(key, value);
    } else if (key == "laplace_ci") {
      cfg.laplace_ci = parse_double(key, value);
    } else if (key == "min_instances_for_area_filter") {
      cfg.min_instances_for_area_filter = static_cast<int>(parse_long(key, value));
    } else {
      throw InvalidArgument(fmt::format("unknown post-processing key '{}'", key));
    }
  }
  cfg.validate();
  return cfg;
}

std::string to_key_values(const PostProcConfig& cfg) {
  return fmt::format(
      "score_threshold = {}\ndup_iou_threshold = {}\nellipse_shrink = {}\nlaplace_ci = {}\n"
      "min_instances_for_area_filter = {}\n",
      cfg.score_threshold, cfg.dup_iou_threshold, cfg.ellipse_shrink, cfg.laplace_ci,
      cfg.min_instances_for_area_filter);
}

std::vector<Instance> filter_by_score(std::vector<Instance> instances, const PostProcConfig& cfg) {
  for (auto& inst : instances) {
    if (active(inst) && inst.score < cfg.score_threshold) inst.excluded = ExclusionReason::BelowScoreThreshold;
  }
  return instances;
}

std::vector<Instance> resolve_cross_class_duplicates(std::vector<Instance> instances, const PostProcConfig& cfg) {
  struct Pair {
    double iou;
    std::int64_t lo, hi;  // ids, for the tie-break
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!active(instances[i])) continue;
    for (std::size_t j = i + 1; j < instances.size(); ++j) {
      if (!active(instances[j]) || instances[i].label == instances[j].label) continue;
      if (iou_bbox(instances[i].bbox, instances[j].bbox) <= 0) continue;
      const double iou = instance_iou(instances[i], instances[j]);
      if (iou >= cfg.dup_iou_threshold) {
        const auto a = raw(instances[i].id), b = raw(instances[j].id);
        pairs.push_back({iou, std::min(a, b), std::max(a, b), i, j});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& p, const Pair& q) {
    if (p.iou != q.iou) return p.iou > q.iou;
    return std::tie(p.lo, p.hi) < std::tie(q.lo, q.hi);
  });

  for (const auto& p : pairs) {
    Instance& a = instances[p.i];
    Instance& b = instances[p.j];
    if (!a.kept() || !b.kept()) continue;
    const bool a_wins = a.score != b.score ? a.score > b.score : a.label == ClassLabel::BVGPlus;
    Instance& winner = a_wins ? a : b;
    Instance& loser = a_wins ? b : a;
    if (loser.unsure) continue;  // already kept as the survivor of a stronger pair
    loser.excluded = ExclusionReason::CrossClassDuplicate;
    if (!winner.validated) {
      winner.unsure = true;
      winner.alt_label = loser.label;
    }
  }
  return instances;
}

std::vector<Instance> filter_by_dish(std::vector<Instance> instances, const std::optional<EllipseModel>& ellipse,
                                     const PostProcConfig& cfg) {
  if (!ellipse) throw MissingEllipse("image has no dish ellipse");
  const EllipseModel inner = shrink_ellipse(*ellipse, cfg.ellipse_shrink);
  for (auto& inst : instances) {
    if (active(inst) && !instance_touches_ellipse(inst, inner)) inst.excluded = ExclusionReason::OutsideDish;
  }
  return instances;
}

LaplaceParams fit_laplace(std::span<const double> areas) {
  if (areas.size() < 2) throw InvalidArgument("Laplace fit needs at least 2 values");
  std::vector<double> v(areas.begin(), areas.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double mu = n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
  double dev = 0;
  for (double x : v) dev += std::abs(x - mu);
  const double b = dev / static_cast<double>(n);
  if (!(b > 0)) throw InvalidArgument("Laplace fit needs values that are not all equal");
  return {mu, b};
}

double laplace_quantile(const LaplaceParams& p, double q) {
  if (!(q > 0 && q < 1)) throw InvalidArgument(fmt::format("quantile level {} outside (0, 1)", q));
  if (q < 0.5) return p.mu + p.b * std::log(2 * q);
  return p.mu - p.b * std::log(2 * (1 - q));
}

std::vector<Instance> filter_area_outliers(std::vector<Instance> instances, const PostProcConfig& cfg,
                                           std::optional<LaplaceParams>* fitted) {
  if (fitted) fitted->reset();
  std::vector<std::size_t> population;
  std::vector<double> areas;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!active(instances[i])) continue;
    population.push_back(i);
    areas.push_back(instance_area(instances[i]));
  }
  if (population.size() < static_cast<std::size_t>(cfg.min_instances_for_area_filter)) return instances;

  LaplaceParams params;
  try {
    params = fit_laplace(areas);
  } catch (const InvalidArgument&) {
    return instances;
  }
  const double tail = (1 - cfg.laplace_ci) / 2;
  const double lo = laplace_quantile(params, tail);
  const double hi = laplace_quantile(params, 1 - tail);
  for (std::size_t k = 0; k < population.size(); ++k) {
    if (areas[k] < lo || areas[k] > hi) instances[population[k]].excluded = ExclusionReason::AreaOutlier;
  }
  if (fitted) *fitted = params;
  return instances;
}

PipelineResult run_pipeline(const ImageRecord& image, std::vector<Instance> instances, const PostProcConfig& cfg) {
  cfg.validate();
  if (!image.dish_ellipse) throw MissingEllipse(fmt::format("image {} has no dish ellipse", raw(image.id)));
  PipelineResult result;
  result.ellipse_used = *image.dish_ellipse;
  instances = filter_by_score(std::move(instances), cfg);
  instances = resolve_cross_class_duplicates(std::move(instances), cfg);
  instances = filter_by_dish(std::move(instances), image.dish_ellipse, cfg);
  result.instances = filter_area_outliers(std::move(instances), cfg, &result.laplace);
  return result;
}

std::vector<PipelineResult> run_dataset(const Dataset& d, const PostProcConfig& cfg) {
  const auto buckets = group_by_image(d.images, d.predictions);
  std::vector<PipelineResult> out(d.images.size());
  parallel_for(d.images.size(), [&](std::size_t i) { out[i] = run_pipeline(d.images[i], buckets[i], cfg); });
  return out;
}

std::vector<PipelineResult> run_dataset_serial(const Dataset& d, const PostProcConfig& cfg) {
  const auto buckets = group_by_image(d.images, d.predictions);
  std::vector<PipelineResult> out;
  out.reserve(d.images.size());
  for (std::size_t i = 0; i < d.images.size(); ++i) out.push_back(run_pipeline(d.images[i], buckets[i], cfg));
  return out;
}

void apply_results(Dataset& d, const std::vector<PipelineResult>& results) {
  std::unordered_map<InstanceId, std::size_t> slot;
  for (std::size_t i = 0; i < d.predictions.size(); ++i) slot.emplace(d.predictions[i].id, i);
  for (const auto& r : results) {
    for (const auto& inst : r.instances) {
      if (auto it = slot.find(inst.id); it != slot.end()) d.predictions[it->second] = inst;
    }
  }
}

ReasonCounts count_reasons(std::span<const Instance> instances) {
  ReasonCounts counts{};
  for (const auto& inst : instances) {
    if (inst.excluded) ++counts[static_cast<std::size_t>(*inst.excluded)];
  }
  return counts;
}

}  // namespace cfu::postproc
