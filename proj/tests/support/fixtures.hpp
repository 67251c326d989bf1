#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cfu/core.hpp"
#include "cfu/evaluation.hpp"

namespace fixture {

inline cfu::Instance from_dense(const cfu::DenseMask& m, std::int64_t id, cfu::ImageId image, cfu::ClassLabel label,
                                double score, cfu::Origin origin) {
  cfu::Instance inst;
  inst.id = cfu::InstanceId{id};
  inst.image_id = image;
  inst.label = label;
  inst.score = score;
  inst.origin = origin;
  inst.mask = cfu::encode(m);
  inst.bbox = cfu::tight_bbox(*inst.mask).value_or(cfu::BBox{0, 0, 1, 1});
  return inst;
}

// Filled axis-aligned ellipse with center (cx, cy) and radii (rx, ry).
inline cfu::DenseMask disc(std::uint32_t w, std::uint32_t h, double cx, double cy, double rx, double ry) {
  cfu::DenseMask m(w, h);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1) m.at(x, y) = 1;
    }
  }
  return m;
}

inline bool disjoint(const cfu::DenseMask& a, const cfu::DenseMask& b) {
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    if (a.pixels[i] && b.pixels[i]) return false;
  }
  return true;
}

struct Options {
  std::uint32_t width = 40;
  std::uint32_t height = 40;
  int max_gt = 6;
  int max_pred = 6;
};

// One image: pairwise disjoint ground-truth colonies, predictions that are
// shifted or rescaled copies (sometimes relabelled) plus free false
// positives. Scores are distinct.
inline cfu::eval::ImageEval random_image(std::mt19937_64& rng, cfu::ImageId image, std::int64_t& next_id,
                                         const Options& o = {}) {
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  cfu::eval::ImageEval out;
  out.id = image;
  std::vector<cfu::DenseMask> gt_masks;
  const int n_gt = pick(0, o.max_gt);
  for (int tries = 0; static_cast<int>(gt_masks.size()) < n_gt && tries < 200; ++tries) {
    const double r = uni(2.0, 5.0);
    auto m = disc(o.width, o.height, uni(r, o.width - r), uni(r, o.height - r), r, r * uni(0.7, 1.0));
    if (std::all_of(gt_masks.begin(), gt_masks.end(), [&](const auto& g) { return disjoint(g, m); })) {
      gt_masks.push_back(std::move(m));
    }
  }
  for (const auto& m : gt_masks) {
    const auto label = pick(0, 1) ? cfu::ClassLabel::BVGPlus : cfu::ClassLabel::BVGMinus;
    out.gts.push_back(from_dense(m, next_id++, image, label, 1.0, cfu::Origin::GroundTruth));
  }
  const int n_pred = pick(0, o.max_pred);
  for (int i = 0; i < n_pred; ++i) {
    cfu::DenseMask m(o.width, o.height);
    cfu::ClassLabel label = pick(0, 1) ? cfu::ClassLabel::BVGPlus : cfu::ClassLabel::BVGMinus;
    if (!out.gts.empty() && pick(0, 3) > 0) {
      const std::size_t g = static_cast<std::size_t>(pick(0, static_cast<int>(out.gts.size()) - 1));
      const auto box = *cfu::tight_bbox(*out.gts[g].mask);
      const double cx = (box.x_min + box.x_max) / 2 + uni(-2, 2), cy = (box.y_min + box.y_max) / 2 + uni(-2, 2);
      m = disc(o.width, o.height, cx, cy, box.width() / 2 * uni(0.7, 1.3), box.height() / 2 * uni(0.7, 1.3));
      if (pick(0, 4) > 0) label = out.gts[g].label;
    } else {
      const double r = uni(1.5, 5.0);
      m = disc(o.width, o.height, uni(0, o.width), uni(0, o.height), r, r);
    }
    if (std::none_of(m.pixels.begin(), m.pixels.end(), [](auto v) { return v != 0; })) m.at(0, 0) = 1;
    out.preds.push_back(from_dense(m, next_id++, image, label, 0.0, cfu::Origin::Model));
  }
  // Distinct scores in (0, 1].
  std::vector<double> scores;
  while (scores.size() < out.preds.size()) {
    const double s = std::round(uni(0.01, 1.0) * 1e6) / 1e6;
    if (std::find(scores.begin(), scores.end(), s) == scores.end()) scores.push_back(s);
  }
  for (std::size_t i = 0; i < scores.size(); ++i) out.preds[i].score = scores[i];
  return out;
}

inline std::vector<cfu::eval::ImageEval> random_images(std::mt19937_64& rng, int n, const Options& o = {}) {
  std::vector<cfu::eval::ImageEval> out;
  std::int64_t next_id = 1;
  for (int i = 0; i < n; ++i) out.push_back(random_image(rng, cfu::ImageId{i + 1}, next_id, o));
  return out;
}

// Dataset form of `images` (ground truth and predictions in one document).
inline cfu::Dataset to_dataset(const std::vector<cfu::eval::ImageEval>& images, const Options& o = {}) {
  cfu::Dataset d;
  d.id = "fixture";
  d.name = "fixture";
  for (const auto& img : images) {
    cfu::ImageRecord rec;
    rec.id = img.id;
    rec.width = o.width;
    rec.height = o.height;
    d.images.push_back(rec);
    d.ground_truth.insert(d.ground_truth.end(), img.gts.begin(), img.gts.end());
    d.predictions.insert(d.predictions.end(), img.preds.begin(), img.preds.end());
  }
  return d;
}

}  // namespace fixture
