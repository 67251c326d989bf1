#include "cfu/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cfu/error.hpp"
#include "cfu/interchange.hpp"

namespace cfu::synth {

namespace {

struct Px {
  int x = 0;
  int y = 0;
};

// Blob shape parameters; pixels are the `area` pixel centers closest to the
// center under the anisotropic metric, so smaller areas nest inside larger.
struct Blob {
  double cx = 0, cy = 0, aspect = 1, angle = 0;
  int area = 0;
  std::vector<Px> px;
};

std::optional<std::vector<Px>> rasterize_blob(const Blob& b, std::uint32_t w, std::uint32_t h) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  double radius = std::sqrt(b.area / (std::numbers::pi * b.aspect)) + 3;
  struct Cand {
    double key;
    int x, y;
  };
  std::vector<Cand> cands;
  for (;;) {
    cands.clear();
    const int x0 = static_cast<int>(std::floor(b.cx - radius)), x1 = static_cast<int>(std::ceil(b.cx + radius));
    const int y0 = static_cast<int>(std::floor(b.cy - radius)), y1 = static_cast<int>(std::ceil(b.cy + radius));
    for (int x = x0; x <= x1; ++x) {
      for (int y = y0; y <= y1; ++y) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double u = c * dx + s * dy, v = (-s * dx + c * dy) / b.aspect;
        cands.push_back({u * u + v * v, x, y});
      }
    }
    if (cands.size() >= static_cast<std::size_t>(b.area) * 2) break;
    radius *= 1.5;
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& p, const Cand& q) {
    if (p.key != q.key) return p.key < q.key;
    return std::tie(p.x, p.y) < std::tie(q.x, q.y);
  });
  std::vector<Px> out;
  out.reserve(static_cast<std::size_t>(b.area));
  for (int i = 0; i < b.area; ++i) {
    const auto& cd = cands[static_cast<std::size_t>(i)];
    if (cd.x < 0 || cd.y < 0 || cd.x >= static_cast<int>(w) || cd.y >= static_cast<int>(h)) return std::nullopt;
    out.push_back({cd.x, cd.y});
  }
  return out;
}

Instance instance_from(const std::vector<Px>& px, std::uint32_t w, std::uint32_t h) {
  std::vector<std::uint64_t> pos;
  pos.reserve(px.size());
  int x_lo = INT32_MAX, x_hi = INT32_MIN, y_lo = INT32_MAX, y_hi = INT32_MIN;
  for (const auto& p : px) {
    pos.push_back(static_cast<std::uint64_t>(p.x) * h + static_cast<std::uint64_t>(p.y));
    x_lo = std::min(x_lo, p.x);
    x_hi = std::max(x_hi, p.x);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  std::sort(pos.begin(), pos.end());
  Instance inst;
  inst.bbox = {static_cast<double>(x_lo), static_cast<double>(y_lo), static_cast<double>(x_hi + 1),
               static_cast<double>(y_hi + 1)};
  inst.mask = encode_positions(pos, w, h);
  return inst;
}

struct Band {
  double lo, hi;
};

// Closed-form central band of a Laplace fit (median, mean absolute
// deviation), computed independently of the pipeline code.
Band laplace_band(std::vector<double> areas, double ci) {
  const std::size_t n = areas.size();
  std::nth_element(areas.begin(), areas.begin() + static_cast<std::ptrdiff_t>(n / 2), areas.end());
  double med = areas[n / 2];
  if (n % 2 == 0) med = (med + *std::max_element(areas.begin(), areas.begin() + static_cast<std::ptrdiff_t>(n / 2))) / 2;
  double dev = 0;
  for (double a : areas) dev += std::abs(a - med);
  const double b = dev / static_cast<double>(n);
  const double half = b * std::log(1 / (1 - ci));
  return {med - half, med + half};
}

struct Attempt {
  const SynthConfig& cfg;
  std::mt19937_64 rng;
  EllipseModel dish;
  std::vector<std::uint8_t> occupied;

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  bool coin(double p) { return p > 0 && std::bernoulli_distribution(p)(rng); }

  double rho(int x, int y) const { return std::sqrt(dish.level(x + 0.5, y + 0.5)); }

  std::pair<double, double> rho_range(const std::vector<Px>& px) const {
    double lo = INFINITY, hi = 0;
    for (const auto& p : px) {
      const double r = rho(p.x, p.y);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    return {lo, hi};
  }

  std::size_t overlap(const std::vector<Px>& px) const {
    std::size_t n = 0;
    for (const auto& p : px) n += occupied[static_cast<std::size_t>(p.y) * cfg.width + static_cast<std::size_t>(p.x)];
    return n;
  }

  void occupy(const std::vector<Px>& px) {
    for (const auto& p : px) occupied[static_cast<std::size_t>(p.y) * cfg.width + static_cast<std::size_t>(p.x)] = 1;
  }

  // Rejection-samples a blob whose center lies at normalized dish radius in
  // [s_lo, s_hi] and whose pixel radius range satisfies `accept`.
  template <typename Accept>
  Blob place(int area, double s_lo, double s_hi, Accept accept) {
    const double c = std::cos(dish.theta), s = std::sin(dish.theta);
    for (int tries = 0; tries < 4000; ++tries) {
      Blob b;
      const double r = std::sqrt(uniform(s_lo * s_lo, s_hi * s_hi));
      const double phi = uniform(0, 2 * std::numbers::pi);
      const double u = r * dish.a * std::cos(phi), v = r * dish.b * std::sin(phi);
      b.cx = dish.cx + c * u - s * v;
      b.cy = dish.cy + s * u + c * v;
      b.aspect = uniform(0.85, 1.0);
      b.angle = uniform(0, std::numbers::pi);
      b.area = area;
      auto px = rasterize_blob(b, cfg.width, cfg.height);
      if (!px) continue;
      const auto [lo, hi] = rho_range(*px);
      if (!accept(lo, hi)) continue;
      if (static_cast<double>(overlap(*px)) > cfg.overlap_cap * area) continue;
      occupy(*px);
      b.px = std::move(*px);
      return b;
    }
    throw InvalidArgument("infeasible packing: could not place a colony");
  }

  // Radius ~ N(mid, range/6) truncated to mid +- 2.5 sd, so the area
  // population is tight enough for dust to fall below the 0.99 band.
  int colony_area() {
    const double mid = (cfg.radius_min + cfg.radius_max) / 2, sd = (cfg.radius_max - cfg.radius_min) / 6;
    double r = mid;
    if (sd > 0) {
      std::normal_distribution<double> radius(mid, sd);
      do {
        r = radius(rng);
      } while (std::abs(r - mid) > 2.5 * sd);
    }
    return std::max(1, static_cast<int>(std::lround(std::numbers::pi * r * r)));
  }

  Blob interior(int area) {
    return place(area, 0, 0.95, [](double, double hi) { return hi <= 0.95; });
  }
};

int planted_count(double rate, int n) { return static_cast<int>(std::lround(rate * n)); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct Pred {
  Instance inst;
  std::optional<ExclusionReason> planted;
  bool clean_score_free = true;  // score may still be adjusted
};

std::optional<SynthCase> attempt_case(const SynthConfig& cfg, ImageId image_id, std::int64_t first_id,
                                      std::uint32_t attempt) {
  const auto& pert = cfg.perturbation;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), attempt};
  Attempt at{cfg, std::mt19937_64(seq), {}, std::vector<std::uint8_t>(std::size_t{cfg.width} * cfg.height, 0)};

  if (cfg.dish) {
    at.dish = normalized(*cfg.dish);
  } else {
    const double m = std::min(cfg.width, cfg.height);
    EllipseModel e;
    e.cx = cfg.width / 2.0 + at.uniform(-0.02, 0.02) * cfg.width;
    e.cy = cfg.height / 2.0 + at.uniform(-0.02, 0.02) * cfg.height;
    e.a = at.uniform(0.40, 0.44) * m;
    e.b = e.a * at.uniform(0.92, 1.0);
    e.theta = at.uniform(0, std::numbers::pi);
    at.dish = normalized(e);
  }

  const int n = cfg.n_colonies;
  const bool near = cfg.near_threshold;
  const bool area_mode = near && pert.dust_rate > 0;
  const int k_low = planted_count(pert.low_score_rate, n);
  const int k_dup = planted_count(pert.duplicate_rate, n);
  const int k_border = planted_count(pert.border_rate, n);
  const int k_dust = planted_count(pert.dust_rate, n);

  // Colony areas. The near-threshold area population is a narrow core with
  // two tail colonies and dust positioned relative to the fitted band.
  std::vector<int> areas(static_cast<std::size_t>(n));
  std::vector<int> dust_areas(static_cast<std::size_t>(k_dust));
  if (!area_mode) {
    for (auto& a : areas) a = at.colony_area();
    for (auto& a : dust_areas) a = static_cast<int>(at.uniform(2, 5));
  } else {
    if (n < 8) throw InvalidArgument("near-threshold area plants need at least 8 colonies");
    const double rm = (cfg.radius_min + cfg.radius_max) / 2;
    const double mu0 = std::numbers::pi * rm * rm, b0 = 0.05 * mu0;
    std::vector<double> core;
    while (static_cast<int>(core.size()) < n - 2) {
      const double dev = std::exponential_distribution<double>(1 / b0)(at.rng) * (at.coin(0.5) ? 1 : -1);
      if (std::abs(dev) <= 2.5 * b0) core.push_back(mu0 + dev);
    }
    double mu = mu0, b = b0;
    for (int it = 0; it < 40; ++it) {
      std::vector<double> all;
      for (double a : core) all.push_back(std::round(a));
      all.push_back(std::round(mu + 3.8 * b));
      all.push_back(std::round(mu - 3.8 * b));
      for (int d = 0; d < k_dust; ++d) all.push_back(std::round(mu - 6.1 * b));
      const auto band = laplace_band(all, 0.5);  // half-width b ln 2
      mu = (band.lo + band.hi) / 2;
      b = (band.hi - band.lo) / 2 / std::log(2.0);
    }
    for (std::size_t i = 0; i < core.size(); ++i) areas[i] = static_cast<int>(std::lround(core[i]));
    areas[static_cast<std::size_t>(n - 2)] = static_cast<int>(std::lround(mu + 3.8 * b));
    areas[static_cast<std::size_t>(n - 1)] = static_cast<int>(std::lround(mu - 3.8 * b));
    for (auto& a : dust_areas) a = static_cast<int>(std::lround(mu - 6.1 * b));
    if (dust_areas.empty() || dust_areas.front() < 1 || areas.back() < 1) return std::nullopt;
  }

  std::vector<Instance> gt;
  std::vector<std::vector<Px>> gt_px;
  auto add_gt = [&](const std::vector<Px>& px, ClassLabel label) {
    Instance inst = instance_from(px, cfg.width, cfg.height);
    inst.image_id = image_id;
    inst.label = label;
    inst.origin = Origin::GroundTruth;
    gt.push_back(std::move(inst));
    gt_px.push_back(px);
  };
  auto draw_label = [&] { return at.coin(cfg.class_ratio) ? ClassLabel::BVGPlus : ClassLabel::BVGMinus; };

  std::vector<Blob> colonies;
  for (int i = 0; i < n; ++i) {
    colonies.push_back(at.interior(areas[static_cast<std::size_t>(i)]));
    add_gt(colonies.back().px, draw_label());
  }
  // Legitimate colonies just inside the default shrunken rim.
  if (near && k_border > 0) {
    for (int i = 0; i < k_border; ++i) {
      const Blob b = at.place(at.colony_area(), 0.965, 0.975 + 2.5 * cfg.radius_max / at.dish.b,
                              [](double lo, double) { return lo > 0.965 && lo < 0.975; });
      add_gt(b.px, draw_label());
    }
  }
  // Near-miss cross-class pairs: an inner colony nested at IoU 0.65.
  if (near && k_dup > 0) {
    for (int i = 0; i < k_dup; ++i) {
      Blob inner = colonies[static_cast<std::size_t>(i)];
      inner.area = static_cast<int>(std::lround(0.65 * inner.area));
      auto px = rasterize_blob(inner, cfg.width, cfg.height);
      add_gt(*px, other(gt[static_cast<std::size_t>(i)].label));
    }
  }

  auto clean_score = [&] {
    const double noise = pert.score_noise > 0 ? std::abs(std::normal_distribution<double>(0, pert.score_noise)(at.rng)) : 0;
    return std::clamp(1.0 - noise, near ? 0.85 : 0.75, 1.0);
  };

  std::vector<Pred> preds;
  const std::size_t n_gt = gt.size();
  for (std::size_t g = 0; g < n_gt; ++g) {
    if (at.coin(pert.drop_rate)) continue;
    std::vector<Px> px = gt_px[g];
    if (pert.jitter_px > 0) {
      std::normal_distribution<double> jitter(0, pert.jitter_px);
      const int dx = static_cast<int>(std::lround(jitter(at.rng)));
      const int dy = static_cast<int>(std::lround(jitter(at.rng)));
      const bool inside = std::all_of(px.begin(), px.end(), [&](const Px& p) {
        return p.x + dx >= 0 && p.y + dy >= 0 && p.x + dx < static_cast<int>(cfg.width) &&
               p.y + dy < static_cast<int>(cfg.height);
      });
      if (inside) {
        for (auto& p : px) p = {p.x + dx, p.y + dy};
      }
    }
    Pred p{instance_from(px, cfg.width, cfg.height), std::nullopt, true};
    p.inst.label = at.coin(pert.class_flip_rate) ? other(gt[g].label) : gt[g].label;
    p.inst.score = clean_score();
    preds.push_back(std::move(p));
  }
  const int k_fp = planted_count(pert.false_positive_rate, n);
  for (int i = 0; i < k_fp; ++i) {
    const Blob b = at.interior(at.colony_area());
    Pred p{instance_from(b.px, cfg.width, cfg.height), std::nullopt, true};
    p.inst.label = draw_label();
    p.inst.score = clean_score();
    preds.push_back(std::move(p));
  }

  // Cross-class twins of clean predictions.
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), at.rng);
  if (static_cast<int>(order.size()) < 2 * k_dup + (near && k_low > 0 ? std::max(2, k_low) : 0)) return std::nullopt;
  std::size_t cursor = 0;
  std::vector<Pred> twins;
  for (int i = 0; i < k_dup; ++i) {
    Pred& orig = preds[order[cursor++]];
    orig.inst.score = std::max(orig.inst.score, at.uniform(0.9, 1.0));
    orig.clean_score_free = false;
    Instance twin;
    if (near) {
      // Nested copy at IoU 0.75: detected at 0.70, missed at 0.80.
      std::vector<Px> px;
      for_each_foreground(*orig.inst.mask, [&](std::uint32_t x, std::uint32_t y) {
        px.push_back({static_cast<int>(x), static_cast<int>(y)});
      });
      const double cx = std::accumulate(px.begin(), px.end(), 0.0, [](double s, const Px& p) { return s + p.x + 0.5; }) /
                        static_cast<double>(px.size());
      const double cy = std::accumulate(px.begin(), px.end(), 0.0, [](double s, const Px& p) { return s + p.y + 0.5; }) /
                        static_cast<double>(px.size());
      const double target = 0.75 * static_cast<double>(px.size());
      std::sort(px.begin(), px.end(), [&](const Px& p, const Px& q) {
        const double dp = std::hypot(p.x + 0.5 - cx, p.y + 0.5 - cy), dq = std::hypot(q.x + 0.5 - cx, q.y + 0.5 - cy);
        if (dp != dq) return dp < dq;
        return std::tie(p.x, p.y) < std::tie(q.x, q.y);
      });
      px.resize(static_cast<std::size_t>(std::lround(target)));
      twin = instance_from(px, cfg.width, cfg.height);
      twin.score = at.uniform(0.81, 0.89);
    } else {
      twin = orig.inst;
      twin.score = at.uniform(0.72, 0.88);
    }
    twin.label = other(orig.inst.label);
    twins.push_back({std::move(twin), ExclusionReason::CrossClassDuplicate, false});
  }
  if (near && k_low > 0) {
    for (int i = 0; i < std::max(2, k_low); ++i) {
      Pred& p = preds[order[cursor++]];
      p.inst.score = at.uniform(0.705, 0.78);
      p.clean_score_free = false;
    }
  }
  for (auto& t : twins) preds.push_back(std::move(t));

  for (int i = 0; i < k_low; ++i) {
    const Blob b = at.interior(at.colony_area());
    Pred p{instance_from(b.px, cfg.width, cfg.height), ExclusionReason::BelowScoreThreshold, false};
    p.inst.label = draw_label();
    p.inst.score = near ? at.uniform(0.62, 0.69) : at.uniform(0.05, 0.65);
    preds.push_back(std::move(p));
  }
  for (int i = 0; i < k_border; ++i) {
    const double lo_rho = near ? 0.985 : 0.99, hi_rho = near ? 0.995 : 1.10;
    const Blob b = at.place(at.colony_area(), lo_rho, hi_rho + 2.5 * cfg.radius_max / at.dish.b,
                            [&](double lo, double) { return lo > lo_rho && lo < hi_rho; });
    Pred p{instance_from(b.px, cfg.width, cfg.height), ExclusionReason::OutsideDish, false};
    p.inst.label = draw_label();
    p.inst.score = clean_score();
    preds.push_back(std::move(p));
  }
  std::vector<std::vector<Px>> dust_px;
  for (int i = 0; i < k_dust; ++i) {
    const Blob b = at.place(dust_areas[static_cast<std::size_t>(i)], 0, 0.90,
                            [](double, double hi) { return hi <= 0.90; });
    Pred p{instance_from(b.px, cfg.width, cfg.height), ExclusionReason::AreaOutlier, false};
    p.inst.label = draw_label();
    p.inst.score = clean_score();
    preds.push_back(std::move(p));
    dust_px.push_back(b.px);
  }

  // Survivors of stages 1-3 under the default config must place dust
  // outside the area band and every clean prediction inside it.
  std::vector<double> population, clean_areas, dust;
  for (const auto& p : preds) {
    const double a = static_cast<double>(mask_area(*p.inst.mask));
    if (!p.planted) {
      population.push_back(a);
      clean_areas.push_back(a);
    } else if (*p.planted == ExclusionReason::AreaOutlier) {
      population.push_back(a);
      dust.push_back(a);
    }
  }
  if (!dust.empty()) {
    if (population.size() < 5) return std::nullopt;
    const Band b99 = laplace_band(population, 0.99);
    const double margin = 0.02 * (b99.hi - b99.lo);
    for (double a : clean_areas) {
      if (a <= b99.lo + margin || a >= b99.hi - margin) return std::nullopt;
    }
    for (double a : dust) {
      if (a >= b99.lo - margin) return std::nullopt;
    }
    if (area_mode) {
      const Band b95 = laplace_band(population, 0.95);
      const Band b999 = laplace_band(population, 0.999);
      for (double a : dust) {
        if (a <= b999.lo + margin) return std::nullopt;
      }
      const int tails = static_cast<int>(std::count_if(clean_areas.begin(), clean_areas.end(), [&](double a) {
        return a < b95.lo - margin || a > b95.hi + margin;
      }));
      if (tails < 2) return std::nullopt;
    }
  } else if (population.size() >= 5) {
    const Band b99 = laplace_band(population, 0.99);
    for (double a : clean_areas) {
      if (a <= b99.lo || a >= b99.hi) return std::nullopt;
    }
  }

  SynthCase out;
  out.record.id = image_id;
  out.record.width = cfg.width;
  out.record.height = cfg.height;
  out.record.pixel_data_ref = fmt::format("images/{}.pgm", raw(image_id));
  out.record.dish_ellipse = at.dish;
  out.record.ellipse_source = EllipseSource::Fitted;
  out.record.split = cfg.split;

  std::int64_t next = first_id;
  for (auto& g : gt) {
    g.id = InstanceId{next++};
    out.ground_truth.push_back(std::move(g));
  }
  for (auto& p : preds) {
    p.inst.id = InstanceId{next++};
    p.inst.image_id = image_id;
    p.inst.origin = Origin::Model;
    if (p.planted) out.planted_violations.emplace(p.inst.id, *p.planted);
    out.predictions.push_back(std::move(p.inst));
  }

  // Light background, dark dish ring, colonies and dust slightly darker.
  GrayImage img(cfg.width, cfg.height);
  const double ring_half_width = 1.5;
  for (std::uint32_t y = 0; y < cfg.height; ++y) {
    for (std::uint32_t x = 0; x < cfg.width; ++x) {
      const double r = at.rho(static_cast<int>(x), static_cast<int>(y));
      img.at(x, y) = std::abs(r - 1) * at.dish.b <= ring_half_width ? 60 : 240;
    }
  }
  for (std::size_t g = 0; g < gt_px.size(); ++g) {
    const std::uint8_t shade = out.ground_truth[g].label == ClassLabel::BVGPlus ? 200 : 170;
    for (const auto& p : gt_px[g]) img.at(static_cast<std::uint32_t>(p.x), static_cast<std::uint32_t>(p.y)) = shade;
  }
  for (const auto& d : dust_px) {
    for (const auto& p : d) img.at(static_cast<std::uint32_t>(p.x), static_cast<std::uint32_t>(p.y)) = 120;
  }
  out.image = std::move(img);
  return out;
}

}  // namespace

Perturbation planted_perturbation() {
  Perturbation p;
  p.drop_rate = 0.05;
  p.false_positive_rate = 0.05;
  p.jitter_px = 1.0;
  p.score_noise = 0.05;
  p.dust_rate = 0.05;
  p.border_rate = 0.08;
  p.class_flip_rate = 0.03;
  p.low_score_rate = 0.08;
  p.duplicate_rate = 0.08;
  return p;
}

void SynthConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0 && v <= 1)) throw InvalidArgument(fmt::format("{} must be in [0, 1]", name));
  };
  if (width < 16 || height < 16) throw InvalidArgument("image must be at least 16x16");
  if (n_colonies < 0) throw InvalidArgument("n_colonies must be non-negative");
  rate(class_ratio, "class_ratio");
  rate(overlap_cap, "overlap_cap");
  rate(perturbation.drop_rate, "drop_rate");
  rate(perturbation.false_positive_rate, "false_positive_rate");
  rate(perturbation.dust_rate, "dust_rate");
  rate(perturbation.border_rate, "border_rate");
  rate(perturbation.class_flip_rate, "class_flip_rate");
  rate(perturbation.low_score_rate, "low_score_rate");
  rate(perturbation.duplicate_rate, "duplicate_rate");
  if (!(perturbation.jitter_px >= 0)) throw InvalidArgument("jitter_px must be non-negative");
  if (!(perturbation.score_noise >= 0)) throw InvalidArgument("score_noise must be non-negative");
  if (!(radius_min > 0 && radius_max >= radius_min)) throw InvalidArgument("radius_range must be positive and ordered");
  if (dish) normalized(*dish);
}

SynthCase generate_case(const SynthConfig& cfg, ImageId image_id, std::int64_t first_instance_id) {
  cfg.validate();
  const EllipseModel dish = cfg.dish ? normalized(*cfg.dish)
                                     : EllipseModel{0, 0, 0.42 * std::min(cfg.width, cfg.height),
                                                    0.40 * std::min(cfg.width, cfg.height), 0};
  const double inner = std::numbers::pi * dish.a * dish.b * 0.95 * 0.95;
  const double need = std::numbers::pi * cfg.radius_max * cfg.radius_max * cfg.n_colonies *
                      (1 + cfg.perturbation.false_positive_rate + cfg.perturbation.low_score_rate);
  if (need > 0.6 * inner) {
    throw InvalidArgument(fmt::format("infeasible packing: {} colonies do not fit the dish", cfg.n_colonies));
  }
  for (std::uint32_t attempt = 0; attempt < 64; ++attempt) {
    try {
      if (auto c = attempt_case(cfg, image_id, first_instance_id, attempt)) return std::move(*c);
    } catch (const InvalidArgument&) {
      if (attempt == 63) throw;
    }
  }
  throw InvalidArgument("could not generate a case satisfying the planted constraints");
}

Split split_for_index(int index, int n_images) {
  const int n_train = static_cast<int>(std::lround(0.65 * n_images));
  const int n_val = static_cast<int>(std::lround(0.15 * n_images));
  if (index < n_train) return Split::Train;
  if (index < n_train + n_val) return Split::Val;
  return Split::Test;
}

namespace {

constexpr std::int64_t kIdsPerImage = 1'000'000;

void append_case(SynthDataset& out, SynthCase c) {
  out.dataset.images.push_back(c.record);
  for (auto& g : c.ground_truth) out.dataset.ground_truth.push_back(std::move(g));
  for (auto& p : c.predictions) out.dataset.predictions.push_back(std::move(p));
  out.planted_violations.insert(c.planted_violations.begin(), c.planted_violations.end());
  out.images.push_back(std::move(c.image));
}

}  // namespace

SynthDataset generate_dataset(const SynthConfig& cfg, int n_images) {
  if (n_images < 1) throw InvalidArgument("n_images must be positive");
  SynthDataset out;
  out.dataset.id = fmt::format("synth-{}", cfg.seed);
  out.dataset.name = out.dataset.id;
  for (int i = 0; i < n_images; ++i) {
    SynthConfig c = cfg;
    c.seed = splitmix(cfg.seed + static_cast<std::uint64_t>(i));
    c.split = n_images == 1 ? cfg.split : split_for_index(i, n_images);
    append_case(out, generate_case(c, ImageId{i + 1}, i * kIdsPerImage + 1));
  }
  return out;
}

SynthDataset search_fixture(std::uint64_t seed) {
  SynthDataset out;
  out.dataset.id = fmt::format("search-{}", seed);
  out.dataset.name = out.dataset.id;
  for (int i = 0; i < 8; ++i) {
    SynthConfig c;
    c.seed = splitmix(seed * 31 + static_cast<std::uint64_t>(i));
    c.n_colonies = 40;
    c.near_threshold = true;
    c.split = i % 2 == 0 ? Split::Train : Split::Val;
    switch (i / 2) {
      case 0: c.perturbation.low_score_rate = 0.1; break;
      case 1: c.perturbation.duplicate_rate = 0.1; break;
      case 2: c.perturbation.border_rate = 0.1; break;
      default: c.perturbation.dust_rate = 0.05; break;
    }
    append_case(out, generate_case(c, ImageId{i + 1}, i * kIdsPerImage + 1));
  }
  return out;
}

void write_dataset_dir(const SynthDataset& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  interchange::save_dataset(s.dataset, dir / "dataset.json");
  nlohmann::ordered_json planted = nlohmann::ordered_json::array();
  for (const auto& [id, reason] : s.planted_violations) {
    planted.push_back({{"instance_id", raw(id)}, {"reason", std::string(to_string(reason))}});
  }
  std::ofstream(dir / "planted.json") << planted.dump(2) << '\n';
  for (std::size_t i = 0; i < s.images.size(); ++i) {
    write_pgm(s.images[i], dir / fmt::format("images/{}.pgm", raw(s.dataset.images[i].id)));
  }
}

}  // namespace cfu::synth
