#include "cfu/param_search.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "cfu/error.hpp"
#include "cfu/parallel.hpp"

namespace cfu::search {

std::vector<postproc::PostProcConfig> SearchSpace::configs(const postproc::PostProcConfig& base) const {
  std::vector<postproc::PostProcConfig> out;
  out.reserve(size());
  for (double s : score_threshold) {
    for (double d : dup_iou_threshold) {
      for (double e : ellipse_shrink) {
        for (double l : laplace_ci) {
          postproc::PostProcConfig c = base;
          c.score_threshold = s;
          c.dup_iou_threshold = d;
          c.ellipse_shrink = e;
          c.laplace_ci = l;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

SearchSpace space_from_key_values(const KeyValues& kv) {
  SearchSpace space;
  for (const auto& [key, value] : kv) {
    auto values = parse_double_list(key, value);
    if (key == "score_threshold") {
      space.score_threshold = std::move(values);
    } else if (key == "dup_iou_threshold") {
      space.dup_iou_threshold = std::move(values);
    } else if (key == "ellipse_shrink") {
      space.ellipse_shrink = std::move(values);
    } else if (key == "laplace_ci") {
      space.laplace_ci = std::move(values);
    } else {
      throw InvalidArgument(fmt::format("unknown search-space key '{}'", key));
    }
  }
  return space;
}

namespace {

// Searched images only, predictions with pipeline flags cleared.
Dataset searched_subset(const Dataset& d, const SearchOptions& opts) {
  Dataset out;
  out.id = d.id;
  out.name = d.name;
  for (const auto& img : d.images) {
    if (std::find(opts.splits.begin(), opts.splits.end(), img.split) != opts.splits.end()) out.images.push_back(img);
  }
  if (out.images.empty()) throw InvalidArgument("no images in the searched splits");
  const Dataset scoped = out;
  for (const auto& g : d.ground_truth) {
    if (scoped.find_image(g.image_id)) out.ground_truth.push_back(g);
  }
  for (auto p : d.predictions) {
    if (!scoped.find_image(p.image_id)) continue;
    if (p.excluded && *p.excluded != ExclusionReason::UserDeleted) p.excluded.reset();
    p.unsure = false;
    p.alt_label.reset();
    out.predictions.push_back(std::move(p));
  }
  if (out.ground_truth.empty()) throw InvalidArgument("searched splits have no ground truth");
  return out;
}

SearchRow evaluate_config(const Dataset& subset, const postproc::PostProcConfig& cfg, const SearchOptions& opts) {
  Dataset filtered = subset;
  postproc::apply_results(filtered, postproc::run_dataset_serial(filtered, cfg));
  const auto images = eval::collect(filtered, filtered);
  const auto pred = eval::count_kept(images, true);
  const auto gt = eval::count_kept(images, false);

  SearchRow row;
  row.config = cfg;
  row.mape_total = eval::mape_counts(pred, gt, std::nullopt).value;
  row.mape_bvg_plus = eval::mape_counts(pred, gt, ClassLabel::BVGPlus).value;
  eval::EvalConfig at50 = opts.eval;
  at50.iou_thresholds = {0.5};
  row.map_at_50 = eval::mean_average_precision_serial(images, at50).map_at.front();
  if (!row.mape_total || !row.mape_bvg_plus) throw InvalidArgument("objective undefined: no ground truth counts");
  row.objective = (*row.mape_total + *row.mape_bvg_plus) / 2;
  return row;
}

// True when a is strictly preferred to b.
bool better(const SearchRow& a, const SearchRow& b) {
  if (a.objective != b.objective) return a.objective < b.objective;
  const double ma = a.map_at_50.value_or(-1), mb = b.map_at_50.value_or(-1);
  if (ma != mb) return ma > mb;
  return a.config.key() < b.config.key();
}

SearchResult pick(std::vector<SearchRow> rows) {
  SearchResult r;
  const auto best = std::min_element(rows.begin(), rows.end(), better);
  r.best_config = best->config;
  r.objective = best->objective;
  r.full_table = std::move(rows);
  return r;
}

void check_space(const SearchSpace& space, const SearchOptions& opts) {
  if (space.size() == 0) throw InvalidArgument("search space is empty");
  for (const auto& c : space.configs(opts.base)) c.validate();
}

}  // namespace

SearchResult grid_search(const Dataset& d, const SearchSpace& space, const SearchOptions& opts) {
  check_space(space, opts);
  const Dataset subset = searched_subset(d, opts);
  const auto configs = space.configs(opts.base);
  std::vector<SearchRow> rows(configs.size());
  parallel_for(configs.size(), [&](std::size_t i) { rows[i] = evaluate_config(subset, configs[i], opts); });
  return pick(std::move(rows));
}

SearchResult grid_search_serial(const Dataset& d, const SearchSpace& space, const SearchOptions& opts) {
  check_space(space, opts);
  const Dataset subset = searched_subset(d, opts);
  std::vector<SearchRow> rows;
  for (const auto& cfg : space.configs(opts.base)) rows.push_back(evaluate_config(subset, cfg, opts));
  return pick(std::move(rows));
}

std::string render_search_table(const SearchResult& r) {
  auto num = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("NA"); };
  std::string out =
      "score_threshold,dup_iou_threshold,ellipse_shrink,laplace_ci,mape_total,mape_bvg_plus,map_at_50,objective,best\n";
  for (const auto& row : r.full_table) {
    const auto& c = row.config;
    out += fmt::format("{},{},{},{},{},{},{},{:.4f},{}\n", c.score_threshold, c.dup_iou_threshold, c.ellipse_shrink,
                       c.laplace_ci, num(row.mape_total), num(row.mape_bvg_plus), num(row.map_at_50), row.objective,
                       c == r.best_config ? 1 : 0);
  }
  return out;
}

}  // namespace cfu::search
