#include "cfu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "cfu/error.hpp"
#include "cfu/parallel.hpp"

namespace cfu::eval {

std::vector<double> EvalConfig::default_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
  return t;
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw InvalidArgument("iou_thresholds must not be empty");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0 && t <= 1)) throw InvalidArgument(fmt::format("IoU threshold {} outside (0, 1]", t));
    if (i > 0 && !(t > iou_thresholds[i - 1])) throw InvalidArgument("IoU thresholds must be strictly increasing");
  }
  if (!(match_iou_for_confusion > 0 && match_iou_for_confusion <= 1)) {
    throw InvalidArgument("match_iou_for_confusion outside (0, 1]");
  }
  if (interpolation_points < 2) throw InvalidArgument("interpolation_points must be >= 2");
}

namespace {

// One image restricted to one class (or all classes), with the IoU matrix
// between score-ordered predictions and id-ordered ground truth.
struct Prepared {
  std::vector<const Instance*> preds;
  std::vector<const Instance*> gts;
  std::vector<double> iou;  // preds.size() x gts.size()

  double at(std::size_t p, std::size_t g) const { return iou[p * gts.size() + g]; }
};

Prepared prepare(std::span<const Instance> preds, std::span<const Instance> gts, std::optional<ClassLabel> c) {
  Prepared out;
  for (const auto& p : preds) {
    if (!c || p.label == *c) out.preds.push_back(&p);
  }
  for (const auto& g : gts) {
    if (!c || g.label == *c) out.gts.push_back(&g);
  }
  std::stable_sort(out.preds.begin(), out.preds.end(), [](const Instance* a, const Instance* b) {
    if (a->score != b->score) return a->score > b->score;
    return raw(a->id) < raw(b->id);
  });
  std::stable_sort(out.gts.begin(), out.gts.end(),
                   [](const Instance* a, const Instance* b) { return raw(a->id) < raw(b->id); });
  out.iou.resize(out.preds.size() * out.gts.size());
  for (std::size_t p = 0; p < out.preds.size(); ++p) {
    for (std::size_t g = 0; g < out.gts.size(); ++g) {
      const Instance& a = *out.preds[p];
      const Instance& b = *out.gts[g];
      out.iou[p * out.gts.size() + g] = iou_bbox(a.bbox, b.bbox) > 0 ? instance_iou(a, b) : 0.0;
    }
  }
  return out;
}

// gt index matched by each prediction, or -1.
std::vector<long> greedy(const Prepared& m, double thr, bool class_aware) {
  std::vector<long> match(m.preds.size(), -1);
  std::vector<char> taken(m.gts.size(), 0);
  for (std::size_t p = 0; p < m.preds.size(); ++p) {
    long best = -1;
    double best_iou = 0;
    for (std::size_t g = 0; g < m.gts.size(); ++g) {
      if (taken[g]) continue;
      if (class_aware && m.preds[p]->label != m.gts[g]->label) continue;
      const double iou = m.at(p, g);
      if (iou >= thr && (best < 0 || iou > best_iou)) {
        best = static_cast<long>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = 1;
      match[p] = best;
    }
  }
  return match;
}

struct Detection {
  double score;
  std::size_t image;
  std::size_t rank;
  bool tp;
};

double interpolated_ap(std::vector<Detection> dets, std::size_t npos, int points) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.image, a.rank) < std::tie(b.image, b.rank);
  });
  std::vector<double> recall(dets.size()), precision(dets.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    tp += dets[i].tp ? 1 : 0;
    recall[i] = static_cast<double>(tp) / static_cast<double>(npos);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0;
  for (int k = 0; k < points; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(points - 1);
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return 100.0 * sum / points;
}

std::optional<double> ap_for(std::span<const Prepared> per_image, double thr, int points) {
  std::size_t npos = 0;
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const Prepared& m = per_image[i];
    npos += m.gts.size();
    const auto match = greedy(m, thr, true);
    for (std::size_t p = 0; p < m.preds.size(); ++p) dets.push_back({m.preds[p]->score, i, p, match[p] >= 0});
  }
  if (npos == 0) return std::nullopt;
  return interpolated_ap(std::move(dets), npos, points);
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

MapResult map_from(const std::array<std::vector<Prepared>, 2>& prepared, const EvalConfig& cfg) {
  MapResult r;
  r.thresholds = cfg.iou_thresholds;
  for (double thr : cfg.iou_thresholds) {
    std::vector<std::optional<double>> per_class;
    for (ClassLabel c : kAllLabels) {
      auto ap = ap_for(prepared[index_of(c)], thr, cfg.interpolation_points);
      r.ap[index_of(c)].push_back(ap);
      per_class.push_back(ap);
    }
    r.map_at.push_back(mean_of(per_class));
  }
  r.map_avg = mean_of(r.map_at);
  return r;
}

// Per-class preparation of every image; `loop` decides serial or OpenMP.
template <typename Loop>
std::array<std::vector<Prepared>, 2> prepare_all(std::span<const ImageEval> images, Loop&& loop) {
  std::array<std::vector<Prepared>, 2> prepared;
  for (auto& v : prepared) v.resize(images.size());
  loop(images.size(), [&](std::size_t i) {
    for (ClassLabel c : kAllLabels) prepared[index_of(c)][i] = prepare(images[i].preds, images[i].gts, c);
  });
  return prepared;
}

void serial_loop(std::size_t n, const std::function<void(std::size_t)>& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

void omp_loop(std::size_t n, const std::function<void(std::size_t)>& body) { parallel_for(n, body); }

}  // namespace

MatchResult match_instances(std::span<const Instance> preds, std::span<const Instance> gts, double iou_threshold,
                            bool class_aware) {
  const Prepared m = prepare(preds, gts, std::nullopt);
  const auto match = greedy(m, iou_threshold, class_aware);
  MatchResult r;
  std::vector<char> gt_used(m.gts.size(), 0);
  for (std::size_t p = 0; p < m.preds.size(); ++p) {
    if (match[p] >= 0) {
      const auto g = static_cast<std::size_t>(match[p]);
      gt_used[g] = 1;
      r.pairs.push_back({m.preds[p]->id, m.gts[g]->id, m.at(p, g)});
    } else {
      r.unmatched_predictions.push_back(m.preds[p]->id);
    }
  }
  for (std::size_t g = 0; g < m.gts.size(); ++g) {
    if (!gt_used[g]) r.unmatched_gt.push_back(m.gts[g]->id);
  }
  return r;
}

std::vector<ImageEval> collect(const Dataset& pred_source, const Dataset& gt_source, std::span<const Split> splits) {
  std::vector<ImageEval> out;
  std::unordered_map<ImageId, std::size_t> slot;
  for (const auto& img : gt_source.images) {
    if (!splits.empty() && std::find(splits.begin(), splits.end(), img.split) == splits.end()) continue;
    slot.emplace(img.id, out.size());
    out.push_back({img.id, {}, {}});
  }
  for (const auto& g : gt_source.ground_truth) {
    if (auto it = slot.find(g.image_id); it != slot.end()) out[it->second].gts.push_back(g);
  }
  for (const auto& p : pred_source.predictions) {
    if (!p.kept()) continue;
    if (auto it = slot.find(p.image_id); it != slot.end()) out[it->second].preds.push_back(p);
  }
  return out;
}

std::optional<double> average_precision(std::span<const ImageEval> images, ClassLabel c, double iou_threshold,
                                        const EvalConfig& cfg) {
  std::vector<Prepared> prepared;
  prepared.reserve(images.size());
  for (const auto& img : images) prepared.push_back(prepare(img.preds, img.gts, c));
  return ap_for(prepared, iou_threshold, cfg.interpolation_points);
}

MapResult mean_average_precision(std::span<const ImageEval> images, const EvalConfig& cfg) {
  cfg.validate();
  return map_from(prepare_all(images, omp_loop), cfg);
}

MapResult mean_average_precision_serial(std::span<const ImageEval> images, const EvalConfig& cfg) {
  cfg.validate();
  return map_from(prepare_all(images, serial_loop), cfg);
}

CountTable count_kept(std::span<const ImageRecord> images, std::span<const Instance> instances) {
  CountTable t;
  for (const auto& img : images) t[img.id];
  for (const auto& inst : instances) {
    if (!inst.kept()) continue;
    auto it = t.find(inst.image_id);
    if (it == t.end()) continue;
    (inst.label == ClassLabel::BVGMinus ? it->second.minus : it->second.plus) += 1;
  }
  return t;
}

CountTable count_kept(std::span<const ImageEval> images, bool predictions) {
  CountTable t;
  for (const auto& img : images) {
    auto& row = t[img.id];
    for (const auto& inst : predictions ? img.preds : img.gts) {
      if (inst.kept()) (inst.label == ClassLabel::BVGMinus ? row.minus : row.plus) += 1;
    }
  }
  return t;
}

MapeResult mape_counts(const CountTable& pred, const CountTable& gt, std::optional<ClassLabel> class_filter,
                       MapeAggregation agg) {
  MapeResult r;
  double sum_ratio = 0, sum_abs = 0, sum_gt = 0;
  for (const auto& [image, actual] : gt) {
    const std::int64_t g = actual.get(class_filter);
    const auto it = pred.find(image);
    const std::int64_t p = it == pred.end() ? 0 : it->second.get(class_filter);
    if (g == 0) {
      ++r.images_skipped;
      continue;
    }
    ++r.images_used;
    const double err = std::abs(static_cast<double>(p - g));
    sum_ratio += err / static_cast<double>(g);
    sum_abs += err;
    sum_gt += static_cast<double>(g);
  }
  if (r.images_used == 0) return r;
  r.value = agg == MapeAggregation::PerImage ? 100.0 * sum_ratio / static_cast<double>(r.images_used)
                                             : 100.0 * sum_abs / sum_gt;
  return r;
}

ConfusionMatrix confusion_matrix(std::span<const ImageEval> images, const EvalConfig& cfg) {
  ConfusionMatrix m;
  for (const auto& img : images) {
    const Prepared prep = prepare(img.preds, img.gts, std::nullopt);
    const auto match = greedy(prep, cfg.match_iou_for_confusion, false);
    std::vector<char> gt_used(prep.gts.size(), 0);
    for (std::size_t p = 0; p < prep.preds.size(); ++p) {
      const std::size_t col = index_of(prep.preds[p]->label);
      if (match[p] >= 0) {
        const auto g = static_cast<std::size_t>(match[p]);
        gt_used[g] = 1;
        ++m.cells[index_of(prep.gts[g]->label)][col];
      } else {
        ++m.cells[ConfusionMatrix::kInvented][col];
      }
    }
    for (std::size_t g = 0; g < prep.gts.size(); ++g) {
      if (!gt_used[g]) ++m.cells[index_of(prep.gts[g]->label)][ConfusionMatrix::kMissed];
    }
  }
  return m;
}

NormalizedConfusion normalize_confusion(const ConfusionMatrix& m) {
  NormalizedConfusion out;
  for (std::size_t r = 0; r < 3; ++r) {
    const std::int64_t total = m.row_total(r);
    if (total <= 0) continue;
    NormalizedRow row;
    const std::size_t cols = r == ConfusionMatrix::kInvented ? 2 : 3;
    for (std::size_t c = 0; c < cols; ++c) {
      row.cells[c] = 100.0 * static_cast<double>(m.cells[r][c]) / static_cast<double>(total);
    }
    out.rows[r] = row;
  }
  return out;
}

VariabilityReport variability_report(std::span<const RaterCounts> raters) {
  if (raters.size() < 2) throw InvalidArgument("variability needs at least two raters");
  std::set<ImageId> reference_images;
  for (const auto& [id, _] : raters[0].counts) reference_images.insert(id);
  for (const auto& r : raters) {
    std::set<ImageId> ids;
    for (const auto& [id, _] : r.counts) ids.insert(id);
    if (ids != reference_images) {
      throw InvalidArgument(fmt::format("rater '{}' covers a different image set than '{}'", r.name, raters[0].name));
    }
  }

  VariabilityReport out;
  struct Acc {
    std::vector<std::optional<double>> total, plus, minus;
  } uu, um;
  for (std::size_t i = 0; i < raters.size(); ++i) {
    for (std::size_t j = i + 1; j < raters.size(); ++j) {
      const auto& ref = raters[i];
      const auto& oth = raters[j];
      PairVariability pv{ref.name, oth.name, mape_counts(oth.counts, ref.counts, std::nullopt).value,
                         mape_counts(oth.counts, ref.counts, ClassLabel::BVGPlus).value,
                         mape_counts(oth.counts, ref.counts, ClassLabel::BVGMinus).value};
      out.pairs.push_back(pv);
      const int models = (ref.kind == RaterKind::Model) + (oth.kind == RaterKind::Model);
      Acc* acc = models == 0 ? &uu : models == 1 ? &um : nullptr;
      if (acc) {
        acc->total.push_back(pv.total);
        acc->plus.push_back(pv.plus);
        acc->minus.push_back(pv.minus);
      }
    }
  }
  out.user_to_user = {mean_of(uu.total), mean_of(uu.plus), mean_of(uu.minus), uu.total.size()};
  out.users_to_model = {mean_of(um.total), mean_of(um.plus), mean_of(um.minus), um.total.size()};
  return out;
}

namespace {

EvalReport finish_report(std::span<const ImageEval> images, const EvalConfig& cfg, MapResult map) {
  EvalReport r;
  r.map = std::move(map);
  const CountTable pred = count_kept(images, true);
  const CountTable gt = count_kept(images, false);
  r.mape_minus = mape_counts(pred, gt, ClassLabel::BVGMinus, cfg.mape_aggregation);
  r.mape_plus = mape_counts(pred, gt, ClassLabel::BVGPlus, cfg.mape_aggregation);
  r.mape_total = mape_counts(pred, gt, std::nullopt, cfg.mape_aggregation);
  r.confusion = confusion_matrix(images, cfg);
  r.confusion_normalized = normalize_confusion(r.confusion);
  for (const auto& img : images) r.per_image_counts.push_back({img.id, pred.at(img.id), gt.at(img.id)});
  return r;
}

}  // namespace

EvalReport evaluate(std::span<const ImageEval> images, const EvalConfig& cfg) {
  return finish_report(images, cfg, mean_average_precision(images, cfg));
}

EvalReport evaluate_serial(std::span<const ImageEval> images, const EvalConfig& cfg) {
  return finish_report(images, cfg, mean_average_precision_serial(images, cfg));
}

}  // namespace cfu::eval
