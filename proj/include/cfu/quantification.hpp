#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfu/core.hpp"
#include "cfu/evaluation.hpp"

namespace cfu::quant {

enum class Severity { Warning, Error };

struct Diagnostic {
  Severity severity = Severity::Warning;
  std::string code;  // stable machine string
  std::string message;
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

// Estimated CFU in the undiluted sample: count / dilution.
double scaled_estimate(double count, DilutionFactor d);

struct Interval {
  double point_estimate = 0;
  double ci_low = 0;
  double ci_high = 0;
  double confidence_level = 0.95;
  std::size_t n = 0;
};

struct DishRow {
  ImageId image{};
  DilutionFactor dilution;
  eval::ClassCounts counts;
  double scaled_minus = 0;
  double scaled_plus = 0;
  double scaled_total = 0;
};

struct QuantReport {
  std::string experiment_id;
  Interval minus, plus, total;
  std::vector<DishRow> per_dish;
  std::vector<Diagnostic> warnings;
};

// Student-t interval over the pooled per-dish scaled estimates of every
// triplicate. n = 1 collapses the interval to the point (with a warning).
// Throws InvalidArgument naming images without counts.
QuantReport aggregate_ci(const Experiment& experiment, const eval::CountTable& counts,
                         double confidence_level = 0.95);

// Non-decreasing dilutions (warning), triplicates without exactly 3 images
// (error), unknown images (error), and, when `dataset` is given, images whose
// kept model predictions are still unsure (warning).
std::vector<Diagnostic> validate_experiment(const Experiment& experiment, const Dataset* dataset = nullptr);

bool has_errors(const std::vector<Diagnostic>& diags);

// Delimited export, one row per (experiment, class) plus a total row.
// Warnings precede the header as '# warning <code>: <message>' lines.
std::string export_csv(const QuantReport& report);

}  // namespace cfu::quant
