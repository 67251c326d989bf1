#include "cfu/report.hpp"

#include <cmath>

#include <fmt/format.h>

namespace cfu::report {

namespace {

using Json = nlohmann::ordered_json;

std::string pct(const std::optional<double>& v) { return v ? fmt::format("{:.1f}", *v) : std::string("n/a"); }

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> map_near(const eval::MapResult& m, double thr) {
  for (std::size_t i = 0; i < m.thresholds.size(); ++i) {
    if (std::abs(m.thresholds[i] - thr) < 1e-9) return m.map_at[i];
  }
  return std::nullopt;
}

constexpr const char* kRowNames[3] = {"BVG- actual", "BVG+ actual", "Invented"};
constexpr const char* kColNames[3] = {"BVG- predicted", "BVG+ predicted", "Missed"};

Json mape_json(const eval::MapeResult& m) {
  return Json{{"value", opt(m.value)}, {"images_used", m.images_used}, {"images_skipped", m.images_skipped}};
}

}  // namespace

std::optional<Format> parse_format(std::string_view s) {
  if (s == "table") return Format::Table;
  if (s == "json") return Format::Json;
  return std::nullopt;
}

Json eval_report_json(const eval::EvalReport& r) {
  Json j;
  Json map_at = Json::array();
  for (std::size_t i = 0; i < r.map.thresholds.size(); ++i) {
    Json ap = Json::object();
    for (auto c : kAllLabels) ap[std::string(to_string(c))] = opt(r.map.ap[index_of(c)][i]);
    map_at.push_back({{"iou", r.map.thresholds[i]}, {"map", opt(r.map.map_at[i])}, {"ap", ap}});
  }
  j["map_avg"] = opt(r.map.map_avg);
  j["map_at"] = std::move(map_at);
  j["mape"] = {{"BVG-", mape_json(r.mape_minus)}, {"BVG+", mape_json(r.mape_plus)}, {"total", mape_json(r.mape_total)}};
  Json cm = Json::array();
  for (std::size_t row = 0; row < 3; ++row) {
    Json cells = Json::array();
    for (std::size_t col = 0; col < 3; ++col) {
      if (row == eval::ConfusionMatrix::kInvented && col == eval::ConfusionMatrix::kMissed) {
        cells.push_back(nullptr);
      } else {
        cells.push_back(r.confusion.cells[row][col]);
      }
    }
    cm.push_back(std::move(cells));
  }
  j["confusion"] = {{"rows", {kRowNames[0], kRowNames[1], kRowNames[2]}},
                    {"columns", {kColNames[0], kColNames[1], kColNames[2]}},
                    {"counts", std::move(cm)}};
  Json norm = Json::array();
  for (const auto& row : r.confusion_normalized.rows) {
    if (!row) {
      norm.push_back(nullptr);
      continue;
    }
    Json cells = Json::array();
    for (const auto& c : row->cells) cells.push_back(opt(c));
    norm.push_back(std::move(cells));
  }
  j["confusion_normalized"] = std::move(norm);
  Json per = Json::array();
  for (const auto& p : r.per_image_counts) {
    per.push_back({{"image_id", raw(p.image)},
                   {"predicted", {{"BVG-", p.predicted.minus}, {"BVG+", p.predicted.plus}, {"total", p.predicted.total()}}},
                   {"actual", {{"BVG-", p.actual.minus}, {"BVG+", p.actual.plus}, {"total", p.actual.total()}}}});
  }
  j["per_image_counts"] = std::move(per);
  if (r.variability) j["variability"] = variability_json(*r.variability);
  return j;
}

std::string render_eval_report(const eval::EvalReport& r, Format f) {
  if (f == Format::Json) return eval_report_json(r).dump(2) + "\n";
  std::string out;
  auto line = [&](std::string_view label, const std::string& value) {
    out += fmt::format("{:<24}{:>8}\n", label, value);
  };
  out += "Benchmarks (%)\n";
  line("mAP IoU=.50:.05:.95", pct(r.map.map_avg));
  line("mAP IoU=.5", pct(map_near(r.map, 0.5)));
  line("mAP IoU=.75", pct(map_near(r.map, 0.75)));
  line("MAPE BVG-", pct(r.mape_minus.value));
  line("MAPE BVG+", pct(r.mape_plus.value));
  line("MAPE Tot", pct(r.mape_total.value));

  out += "\nConfusion matrix\n";
  out += fmt::format("{:<14}{:>16}{:>16}{:>10}\n", "", kColNames[0], kColNames[1], kColNames[2]);
  for (std::size_t row = 0; row < 3; ++row) {
    out += fmt::format("{:<14}", kRowNames[row]);
    for (std::size_t col = 0; col < 3; ++col) {
      const bool undefined = row == eval::ConfusionMatrix::kInvented && col == eval::ConfusionMatrix::kMissed;
      const std::string cell = undefined ? "-" : fmt::format("{}", r.confusion.cells[row][col]);
      out += fmt::format("{:>{}}", cell, col == 2 ? 10 : 16);
    }
    out += '\n';
  }

  out += "\nNormalised confusion matrix (% of row)\n";
  out += fmt::format("{:<14}{:>16}{:>16}{:>10}\n", "", kColNames[0], kColNames[1], kColNames[2]);
  for (std::size_t row = 0; row < 3; ++row) {
    out += fmt::format("{:<14}", kRowNames[row]);
    const auto& nr = r.confusion_normalized.rows[row];
    for (std::size_t col = 0; col < 3; ++col) {
      const std::string cell = nr ? (nr->cells[col] ? fmt::format("{:.1f}", *nr->cells[col]) : "-") : "n/a";
      out += fmt::format("{:>{}}", cell, col == 2 ? 10 : 16);
    }
    out += '\n';
  }

  out += "\nPer-image counts (predicted / actual)\n";
  out += fmt::format("{:<10}{:>12}{:>12}{:>12}\n", "image", "BVG-", "BVG+", "total");
  for (const auto& p : r.per_image_counts) {
    out += fmt::format("{:<10}{:>12}{:>12}{:>12}\n", raw(p.image), fmt::format("{}/{}", p.predicted.minus, p.actual.minus),
                       fmt::format("{}/{}", p.predicted.plus, p.actual.plus),
                       fmt::format("{}/{}", p.predicted.total(), p.actual.total()));
  }
  if (r.variability) out += "\n" + render_variability(*r.variability, Format::Table);
  return out;
}

Json variability_json(const eval::VariabilityReport& v) {
  Json pairs = Json::array();
  for (const auto& p : v.pairs) {
    pairs.push_back({{"reference", p.reference},
                     {"other", p.other},
                     {"total", opt(p.total)},
                     {"BVG+", opt(p.plus)},
                     {"BVG-", opt(p.minus)}});
  }
  auto summary = [](const eval::VariabilitySummary& s) {
    return Json{{"total", opt(s.total)}, {"BVG+", opt(s.plus)}, {"BVG-", opt(s.minus)}, {"pairs", s.pairs}};
  };
  return Json{{"pairs", std::move(pairs)},
              {"user_to_user", summary(v.user_to_user)},
              {"users_to_model", summary(v.users_to_model)}};
}

std::string render_variability(const eval::VariabilityReport& v, Format f) {
  if (f == Format::Json) return variability_json(v).dump(2) + "\n";
  std::string out = "Variability (MAPE %)\n";
  out += fmt::format("{:<20}{:>10}{:>10}{:>10}\n", "", "Total", "BVG+", "BVG-");
  out += fmt::format("{:<20}{:>10}{:>10}{:>10}\n", "User to User", pct(v.user_to_user.total), pct(v.user_to_user.plus),
                     pct(v.user_to_user.minus));
  out += fmt::format("{:<20}{:>10}{:>10}{:>10}\n", "Users to Model", pct(v.users_to_model.total),
                     pct(v.users_to_model.plus), pct(v.users_to_model.minus));
  out += "\nPairs (reference first)\n";
  for (const auto& p : v.pairs) {
    out += fmt::format("{:<20}{:>10}{:>10}{:>10}\n", fmt::format("{} / {}", p.reference, p.other), pct(p.total),
                       pct(p.plus), pct(p.minus));
  }
  return out;
}

PostprocSummary summarize(const Dataset& d) {
  PostprocSummary s;
  s.images = d.images.size();
  s.predictions = d.predictions.size();
  for (const auto& p : d.predictions) {
    if (p.kept()) ++s.kept;
  }
  s.excluded = postproc::count_reasons(d.predictions);
  return s;
}

Json postproc_summary_json(const PostprocSummary& s) {
  Json ex = Json::object();
  for (std::size_t i = 0; i < kExclusionReasonCount; ++i) {
    ex[std::string(to_string(static_cast<ExclusionReason>(i)))] = s.excluded[i];
  }
  return Json{{"images", s.images}, {"predictions", s.predictions}, {"kept", s.kept}, {"excluded", std::move(ex)}};
}

std::string render_postproc_summary(const PostprocSummary& s, Format f) {
  if (f == Format::Json) return postproc_summary_json(s).dump(2) + "\n";
  std::string out;
  out += fmt::format("{:<24}{:>8}\n", "images", s.images);
  out += fmt::format("{:<24}{:>8}\n", "predictions", s.predictions);
  out += fmt::format("{:<24}{:>8}\n", "kept", s.kept);
  for (std::size_t i = 0; i < kExclusionReasonCount; ++i) {
    out += fmt::format("{:<24}{:>8}\n", to_string(static_cast<ExclusionReason>(i)), s.excluded[i]);
  }
  return out;
}

}  // namespace cfu::report
