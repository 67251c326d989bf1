#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfu/core.hpp"
#include "cfu/evaluation.hpp"
#include "cfu/quantification.hpp"

// Compositions shared by the CLI and the HTTP service, so both produce the
// same bytes for the same inputs.
namespace cfu::workflow {

struct RaterSource {
  std::string name;
  eval::RaterKind kind = eval::RaterKind::User;
  const Dataset* dataset = nullptr;
  bool predictions = false;  // kept predictions, otherwise ground truth
};

struct EvalRequest {
  eval::EvalConfig config;
  std::vector<Split> splits;  // empty: every image
  std::vector<RaterSource> raters;
};

// Throws Conflict when the selected images hold no ground truth.
eval::EvalReport evaluate_datasets(const Dataset& pred, const Dataset& gt, const EvalRequest& req);

// Keys: iou_thresholds (list), match_iou_for_confusion, interpolation_points,
// mape_aggregation ("per_image" | "pooled"), splits (list of names).
EvalRequest eval_request_from_json(const nlohmann::json& j);

struct ExportResult {
  std::vector<quant::Diagnostic> diagnostics;
  std::optional<std::string> csv;  // absent when a diagnostic is an error
};

// Counts are the kept predictions of each dish image. Throws NotFound for an
// unknown experiment id.
ExportResult export_experiment(const Dataset& d, const std::string& experiment_id, double confidence_level = 0.95);

nlohmann::ordered_json diagnostics_json(const std::vector<quant::Diagnostic>& diags);

}  // namespace cfu::workflow
