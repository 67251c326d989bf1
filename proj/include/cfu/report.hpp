#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cfu/evaluation.hpp"
#include "cfu/postproc.hpp"

namespace cfu::report {

enum class Format { Table, Json };

std::optional<Format> parse_format(std::string_view s);

// Text tables: benchmark block (mAP and MAPE rows), confusion matrix,
// row-normalized confusion matrix, per-image counts and, when present, the
// rater variability block. Json carries the same data unrounded.
std::string render_eval_report(const eval::EvalReport& r, Format f);
nlohmann::ordered_json eval_report_json(const eval::EvalReport& r);

std::string render_variability(const eval::VariabilityReport& v, Format f);
nlohmann::ordered_json variability_json(const eval::VariabilityReport& v);

struct PostprocSummary {
  std::size_t images = 0;
  std::size_t predictions = 0;
  std::size_t kept = 0;
  postproc::ReasonCounts excluded{};
};

PostprocSummary summarize(const Dataset& d);
std::string render_postproc_summary(const PostprocSummary& s, Format f);
nlohmann::ordered_json postproc_summary_json(const PostprocSummary& s);

}  // namespace cfu::report
