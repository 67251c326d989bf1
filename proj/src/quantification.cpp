#include "cfu/quantification.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cfu/error.hpp"

namespace cfu::quant {

double scaled_estimate(double count, DilutionFactor d) {
  if (!(count >= 0)) throw InvalidArgument("count must be non-negative");
  if (!(d.value > 0 && d.value <= 1)) throw InvalidArgument(fmt::format("dilution {} outside (0, 1]", d.value));
  return count / d.value;
}

namespace {

Interval t_interval(const std::vector<double>& xs, double level) {
  Interval iv;
  iv.confidence_level = level;
  iv.n = xs.size();
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  iv.point_estimate = iv.ci_low = iv.ci_high = mean;
  if (xs.size() < 2) return iv;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  const boost::math::students_t dist(static_cast<double>(xs.size() - 1));
  const double t = boost::math::quantile(dist, 1 - (1 - level) / 2);
  const double half = t * sd / std::sqrt(static_cast<double>(xs.size()));
  iv.ci_low = mean - half;
  iv.ci_high = mean + half;
  return iv;
}

}  // namespace

QuantReport aggregate_ci(const Experiment& experiment, const eval::CountTable& counts, double confidence_level) {
  if (!(confidence_level > 0 && confidence_level < 1)) {
    throw InvalidArgument(fmt::format("confidence level {} outside (0, 1)", confidence_level));
  }
  QuantReport report;
  report.experiment_id = experiment.id;
  std::vector<std::string> missing;
  for (const auto& tri : experiment.triplicates) {
    for (ImageId id : tri.image_ids) {
      auto it = counts.find(id);
      if (it == counts.end()) {
        missing.push_back(std::to_string(raw(id)));
        continue;
      }
      const eval::ClassCounts& c = it->second;
      report.per_dish.push_back({id, tri.dilution, c, scaled_estimate(static_cast<double>(c.minus), tri.dilution),
                                 scaled_estimate(static_cast<double>(c.plus), tri.dilution),
                                 scaled_estimate(static_cast<double>(c.total()), tri.dilution)});
    }
  }
  if (!missing.empty()) {
    throw InvalidArgument(fmt::format("no counts for image(s) {}", fmt::join(missing, ", ")));
  }
  if (report.per_dish.empty()) throw InvalidArgument(fmt::format("experiment '{}' has no dishes", experiment.id));

  std::vector<double> minus, plus, total;
  for (const auto& d : report.per_dish) {
    minus.push_back(d.scaled_minus);
    plus.push_back(d.scaled_plus);
    total.push_back(d.scaled_total);
  }
  report.minus = t_interval(minus, confidence_level);
  report.plus = t_interval(plus, confidence_level);
  report.total = t_interval(total, confidence_level);
  if (report.per_dish.size() == 1) {
    report.warnings.push_back({Severity::Warning, "single_dish",
                               "only one dish: confidence interval collapsed to the point estimate"});
  }
  return report;
}

std::vector<Diagnostic> validate_experiment(const Experiment& experiment, const Dataset* dataset) {
  std::vector<Diagnostic> out;
  if (experiment.triplicates.empty()) {
    out.push_back({Severity::Error, "no_triplicates", "experiment has no triplicates"});
  }
  for (std::size_t i = 0; i < experiment.triplicates.size(); ++i) {
    const auto& tri = experiment.triplicates[i];
    if (tri.image_ids.size() != 3) {
      out.push_back({Severity::Error, "image_count",
                     fmt::format("triplicate {} has {} images, expected 3", i + 1, tri.image_ids.size())});
    }
    if (!(tri.dilution.value > 0 && tri.dilution.value <= 1)) {
      out.push_back({Severity::Error, "dilution_range",
                     fmt::format("triplicate {} dilution {} outside (0, 1]", i + 1, tri.dilution.value)});
    }
  }
  for (std::size_t i = 1; i < experiment.triplicates.size(); ++i) {
    if (!(experiment.triplicates[i].dilution.value < experiment.triplicates[i - 1].dilution.value)) {
      out.push_back({Severity::Warning, "non_decreasing_dilutions",
                     fmt::format("dilutions are not strictly decreasing at triplicate {} ({} after {})", i + 1,
                                 experiment.triplicates[i].dilution.value,
                                 experiment.triplicates[i - 1].dilution.value)});
      break;
    }
  }

  std::set<ImageId> seen;
  for (const auto& tri : experiment.triplicates) {
    for (ImageId id : tri.image_ids) {
      if (!seen.insert(id).second) {
        out.push_back({Severity::Error, "duplicate_image", fmt::format("image {} used twice", raw(id))});
      }
    }
  }

  if (dataset) {
    std::unordered_set<ImageId> unsure_images;
    for (const auto& p : dataset->predictions) {
      if (p.kept() && p.unsure && p.origin == Origin::Model) unsure_images.insert(p.image_id);
    }
    for (ImageId id : seen) {
      if (!dataset->find_image(id)) {
        out.push_back({Severity::Error, "unknown_image", fmt::format("image {} is not in the dataset", raw(id))});
      } else if (unsure_images.count(id)) {
        out.push_back({Severity::Warning, "unvalidated_predictions",
                       fmt::format("image {} has unsure predictions awaiting validation", raw(id))});
      }
    }
  }
  return out;
}

bool has_errors(const std::vector<Diagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(), [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

std::string export_csv(const QuantReport& report) {
  std::string out;
  for (const auto& w : report.warnings) {
    out += fmt::format("# {} {}: {}\n", w.severity == Severity::Error ? "error" : "warning", w.code, w.message);
  }
  out += "experiment_id,class,point_estimate,ci_low,ci_high,confidence_level,n_dishes,dilutions,dish_counts\n";

  std::vector<double> dilutions;
  for (const auto& d : report.per_dish) {
    if (std::find(dilutions.begin(), dilutions.end(), d.dilution.value) == dilutions.end()) {
      dilutions.push_back(d.dilution.value);
    }
  }
  const std::string dil = fmt::format("{}", fmt::join(dilutions, ";"));

  auto row = [&](std::string_view cls, const Interval& iv, auto count_of) {
    std::vector<std::string> dishes;
    for (const auto& d : report.per_dish) {
      dishes.push_back(fmt::format("{}@{}:{}", raw(d.image), d.dilution.value, count_of(d.counts)));
    }
    out += fmt::format("{},{},{:.3f},{:.3f},{:.3f},{},{},{},{}\n", report.experiment_id, cls, iv.point_estimate,
                       iv.ci_low, iv.ci_high, iv.confidence_level, iv.n, dil, fmt::join(dishes, ";"));
  };
  row("BVG-", report.minus, [](const eval::ClassCounts& c) { return c.minus; });
  row("BVG+", report.plus, [](const eval::ClassCounts& c) { return c.plus; });
  row("total", report.total, [](const eval::ClassCounts& c) { return c.total(); });
  return out;
}

}  // namespace cfu::quant
