#include "cfu/workflow.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "cfu/error.hpp"

namespace cfu::workflow {

eval::EvalReport evaluate_datasets(const Dataset& pred, const Dataset& gt, const EvalRequest& req) {
  req.config.validate();
  const auto images = eval::collect(pred, gt, req.splits);
  const bool any_gt = std::any_of(images.begin(), images.end(), [](const eval::ImageEval& i) { return !i.gts.empty(); });
  if (!any_gt) throw Conflict("no ground truth on the selected images");
  eval::EvalReport report = eval::evaluate(images, req.config);
  if (!req.raters.empty()) {
    std::vector<ImageRecord> records;
    for (const auto& ie : images) records.push_back(*gt.find_image(ie.id));
    std::vector<eval::RaterCounts> raters;
    for (const auto& r : req.raters) {
      if (!r.dataset) throw InvalidArgument(fmt::format("rater '{}' has no data", r.name));
      for (const auto& rec : records) {
        if (!r.dataset->find_image(rec.id)) {
          throw InvalidArgument(fmt::format("rater '{}' lacks image {}", r.name, raw(rec.id)));
        }
      }
      const auto& src = r.predictions ? r.dataset->predictions : r.dataset->ground_truth;
      raters.push_back({r.name, r.kind, eval::count_kept(records, src)});
    }
    report.variability = eval::variability_report(raters);
  }
  return report;
}

EvalRequest eval_request_from_json(const nlohmann::json& j) {
  EvalRequest req;
  if (j.is_null()) return req;
  if (!j.is_object()) throw InvalidArgument("evaluation options must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "iou_thresholds") {
        req.config.iou_thresholds = value.get<std::vector<double>>();
      } else if (key == "match_iou_for_confusion") {
        req.config.match_iou_for_confusion = value.get<double>();
      } else if (key == "interpolation_points") {
        req.config.interpolation_points = value.get<int>();
      } else if (key == "mape_aggregation") {
        const auto v = value.get<std::string>();
        if (v == "per_image") {
          req.config.mape_aggregation = eval::MapeAggregation::PerImage;
        } else if (v == "pooled") {
          req.config.mape_aggregation = eval::MapeAggregation::Pooled;
        } else {
          throw InvalidArgument(fmt::format("unknown mape_aggregation '{}'", v));
        }
      } else if (key == "splits") {
        for (const auto& s : value.get<std::vector<std::string>>()) {
          auto split = parse_split(s);
          if (!split) throw InvalidArgument(fmt::format("unknown split '{}'", s));
          req.splits.push_back(*split);
        }
      } else if (key != "format" && key != "raters") {
        throw InvalidArgument(fmt::format("unknown evaluation option '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("evaluation option has the wrong type: {}", e.what()));
  }
  req.config.validate();
  return req;
}

ExportResult export_experiment(const Dataset& d, const std::string& experiment_id, double confidence_level) {
  auto it = std::find_if(d.experiments.begin(), d.experiments.end(),
                         [&](const Experiment& e) { return e.id == experiment_id; });
  if (it == d.experiments.end()) throw NotFound(fmt::format("experiment '{}' not found", experiment_id));
  ExportResult out;
  out.diagnostics = quant::validate_experiment(*it, &d);
  if (quant::has_errors(out.diagnostics)) return out;
  const auto counts = eval::count_kept(d.images, d.predictions);
  quant::QuantReport report = quant::aggregate_ci(*it, counts, confidence_level);
  std::vector<quant::Diagnostic> warnings = out.diagnostics;
  for (auto& w : report.warnings) warnings.push_back(w);
  report.warnings = warnings;
  out.csv = quant::export_csv(report);
  return out;
}

nlohmann::ordered_json diagnostics_json(const std::vector<quant::Diagnostic>& diags) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : diags) {
    arr.push_back({{"severity", d.severity == quant::Severity::Error ? "error" : "warning"},
                   {"code", d.code},
                   {"message", d.message}});
  }
  return arr;
}

}  // namespace cfu::workflow
