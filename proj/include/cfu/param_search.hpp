#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfu/core.hpp"
#include "cfu/evaluation.hpp"
#include "cfu/kv_config.hpp"
#include "cfu/postproc.hpp"

namespace cfu::search {

struct SearchSpace {
  std::vector<double> score_threshold{0.60, 0.70, 0.80};
  std::vector<double> dup_iou_threshold{0.60, 0.70, 0.80};
  std::vector<double> ellipse_shrink{0.96, 0.98, 1.00};
  std::vector<double> laplace_ci{0.95, 0.99, 0.999};

  std::size_t size() const {
    return score_threshold.size() * dup_iou_threshold.size() * ellipse_shrink.size() * laplace_ci.size();
  }
  // Cartesian product in nested list order; `base` supplies the other fields.
  std::vector<postproc::PostProcConfig> configs(const postproc::PostProcConfig& base = {}) const;
};

// Keys are the PostProcConfig field names, values comma-separated lists.
SearchSpace space_from_key_values(const KeyValues& kv);

struct SearchRow {
  postproc::PostProcConfig config;
  std::optional<double> mape_total;
  std::optional<double> mape_bvg_plus;
  std::optional<double> map_at_50;
  double objective = 0;
};

struct SearchResult {
  postproc::PostProcConfig best_config;
  double objective = 0;
  std::vector<SearchRow> full_table;  // in enumeration order
};

struct SearchOptions {
  std::vector<Split> splits{Split::Train, Split::Val};
  postproc::PostProcConfig base;
  eval::EvalConfig eval;
};

// objective = (MAPE total + MAPE BVG+) / 2 over the selected splits, per-image
// averaged. Ties: higher mAP@.5, then the lexicographically smaller config.
// Configs are evaluated in parallel.
SearchResult grid_search(const Dataset& d, const SearchSpace& space, const SearchOptions& opts = {});
SearchResult grid_search_serial(const Dataset& d, const SearchSpace& space, const SearchOptions& opts = {});

// Delimited result table.
std::string render_search_table(const SearchResult& r);

}  // namespace cfu::search
