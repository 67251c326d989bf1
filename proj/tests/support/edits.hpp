#pragma once

#include <random>
#include <vector>

#include "cfu/error.hpp"
#include "cfu/store.hpp"
#include "cfu/synthbench.hpp"

// Random edit sequences over a small synthetic dataset. Candidates that the
// fold rejects are dropped, so every returned event applies cleanly in order.
namespace edits {

inline cfu::Dataset small_base(std::uint64_t seed, int images = 2) {
  cfu::synth::SynthConfig cfg;
  cfg.seed = seed;
  cfg.width = cfg.height = 160;
  cfg.n_colonies = 12;
  cfg.perturbation = cfu::synth::planted_perturbation();
  return cfu::synth::generate_dataset(cfg, images).dataset;
}

inline cfu::store::Payload random_payload(std::mt19937_64& rng, const cfu::store::Snapshot& s) {
  using namespace cfu;
  using namespace cfu::store;
  const Dataset& d = s.dataset;
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  const InstanceId some_pred = d.predictions.empty() ? InstanceId{0} : d.predictions[pick(d.predictions.size())].id;
  const ImageRecord& img = d.images[pick(d.images.size())];
  switch (pick(11)) {
    case 0: {
      Instance inst;
      inst.id = InstanceId{next_instance_id(d)};
      inst.image_id = img.id;
      inst.origin = Origin::User;
      inst.score = 1;
      inst.label = coin(0.5) ? ClassLabel::BVGPlus : ClassLabel::BVGMinus;
      const std::uint32_t x = static_cast<std::uint32_t>(pick(img.width - 4));
      const std::uint32_t y = static_cast<std::uint32_t>(pick(img.height - 4));
      std::vector<std::uint64_t> pos;
      for (std::uint32_t cx = x; cx < x + 3; ++cx)
        for (std::uint32_t cy = y; cy < y + 3; ++cy) pos.push_back(std::uint64_t(cx) * img.height + cy);
      inst.mask = encode_positions(pos, img.width, img.height);
      inst.bbox = *tight_bbox(*inst.mask);
      return CreateInstance{inst};
    }
    case 1: return DeleteInstance{some_pred};
    case 2: return ChangeClass{some_pred, coin(0.5) ? ClassLabel::BVGPlus : ClassLabel::BVGMinus};
    case 3: return ValidateUnsure{some_pred};
    case 4: return InvalidateUnsure{some_pred};
    case 5: return RestoreExcluded{some_pred};
    case 6: {
      const double cx = img.width / 2.0 + std::uniform_real_distribution<double>(-5, 5)(rng);
      const double cy = img.height / 2.0 + std::uniform_real_distribution<double>(-5, 5)(rng);
      const double a = std::uniform_real_distribution<double>(40, 75)(rng);
      const double b = a * std::uniform_real_distribution<double>(0.8, 1.0)(rng);
      return MoveEllipse{img.id, {cx, cy, a, b, std::uniform_real_distribution<double>(0, 3.14)(rng)},
                         EllipseSource::UserOverride};
    }
    case 7: {
      TriplicateGroup g;
      for (int k = 0; k < 3; ++k) g.image_ids.push_back(d.images[pick(d.images.size())].id);
      g.dilution = {coin(0.9) ? 0.001 : 1.5};
      return SetDilution{coin(0.5) ? "e1" : "e2", {g}};
    }
    case 8: return SetSplit{img.id, static_cast<Split>(pick(4))};
    case 9: {
      postproc::PostProcConfig cfg;
      cfg.score_threshold = coin(0.5) ? 0.7 : 0.6;
      return ApplyPostprocess{cfg, pipeline_updates(d, cfg)};
    }
    default: {
      postproc::PostProcConfig cfg;
      const EllipseModel e = *img.dish_ellipse;
      EllipseModel moved{e.cx + 2, e.cy, e.a, e.b, e.theta};
      return ApplyPostprocess{cfg, ellipse_updates(d, img.id, moved, cfg)};
    }
  }
}

// Returns accepted events (seq assigned) and the final snapshot.
inline std::vector<cfu::store::EditEvent> random_sequence(std::mt19937_64& rng, const cfu::Dataset& base, int length,
                                                          cfu::store::Snapshot* final_state = nullptr) {
  using namespace cfu::store;
  Snapshot s{base, 0, std::nullopt};
  std::vector<EditEvent> out;
  for (int k = 0; k < length; ++k) {
    try {
      EditEvent e{s.seq + 1, k % 2 ? "alice" : "bob", 1700000000000 + k, random_payload(rng, s)};
      apply_event(s, e);
      out.push_back(std::move(e));
    } catch (const cfu::Error&) {
    }
  }
  if (final_state) *final_state = s;
  return out;
}

}  // namespace edits
