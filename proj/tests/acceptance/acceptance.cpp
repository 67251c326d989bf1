// One PASS/FAIL line per acceptance criterion; exits non-zero when any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "cfu/api.hpp"
#include "cfu/error.hpp"
#include "cfu/evaluation.hpp"
#include "cfu/geometry.hpp"
#include "cfu/interchange.hpp"
#include "cfu/param_search.hpp"
#include "cfu/postproc.hpp"
#include "cfu/quantification.hpp"
#include "cfu/store.hpp"
#include "cfu/synthbench.hpp"
#include "edits.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cfu;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr double kTable3Tol = 0.1;
constexpr int kPostprocCases = 50;
constexpr double kPostprocSeconds = 30;
constexpr int kMatchingCases = 1000;
constexpr double kHandApTol = 1e-12;  // rounding of the 101-term sum
constexpr int kIouPairs = 10000;
constexpr std::uint32_t kMaxMaskSide = 64;
constexpr int kEllipseCases = 1000;
constexpr double kEllipseRelTol = 1e-6;
constexpr int kLaplaceCases = 1000;
constexpr double kLaplaceRelTol = 1e-9;
constexpr double kQuantileTol = 1e-12;
constexpr int kInvariantFixtures = 200;
constexpr double kQuantPointTol = 1;
constexpr double kQuantHalfWidth = 24841;
constexpr double kQuantHalfTol = 1;
constexpr int kSearchSeeds = 3;
constexpr double kSearchSeconds = 300;
constexpr int kReplaySequences = 1000;
constexpr int kReplayLength = 30;

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void criterion(const char* id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = fmt::format("exception: {}", e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) o.require(false, fmt::format("took {:.1f}s > {:.0f}s", secs, limit_s));
  if (!o.pass) ++failures;
  std::printf("%s %s %s (%.2fs)%s%s\n", o.pass ? "PASS" : "FAIL", id, name, secs, o.detail.empty() ? "" : ": ",
              o.detail.c_str());
  std::fflush(stdout);
}

double rel(double got, double want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); }

Outcome table3() {
  Outcome o;
  eval::ConfusionMatrix m;
  m.cells[0] = {78, 4, 2};
  m.cells[1] = {2, 395, 4};
  m.cells[2] = {3, 6, 0};
  const auto n = eval::normalize_confusion(m);
  const double want[3][3] = {{92.9, 4.8, 2.4}, {0.5, 98.5, 1.0}, {33.3, 66.7, 0}};
  for (std::size_t r = 0; r < 3; ++r) {
    o.require(n.rows[r].has_value(), fmt::format("row {} undefined", r));
    if (!n.rows[r]) continue;
    for (std::size_t c = 0; c < (r == 2 ? 2u : 3u); ++c) {
      const auto& v = n.rows[r]->cells[c];
      o.require(v && std::abs(*v - want[r][c]) <= kTable3Tol,
                fmt::format("cell ({}, {}) = {}", r, c, v ? fmt::format("{:.3f}", *v) : "-"));
    }
  }
  return o;
}

Outcome postproc_precision_recall() {
  Outcome o;
  std::size_t planted = 0, flagged = 0, correct = 0, clean_excluded = 0;
  for (int seed = 0; seed < kPostprocCases; ++seed) {
    synth::SynthConfig cfg;
    cfg.seed = 1000 + seed;
    cfg.perturbation = synth::planted_perturbation();
    const auto s = synth::generate_dataset(cfg, 1);
    Dataset d = s.dataset;
    postproc::apply_results(d, postproc::run_dataset(d, {}));
    planted += s.planted_violations.size();
    for (const auto& p : d.predictions) {
      auto it = s.planted_violations.find(p.id);
      if (p.excluded) ++flagged;
      if (p.excluded && it != s.planted_violations.end() && *p.excluded == it->second) ++correct;
      if (p.excluded && it == s.planted_violations.end()) ++clean_excluded;
    }
  }
  const double precision = flagged ? 100.0 * correct / flagged : 0;
  const double recall = planted ? 100.0 * correct / planted : 0;
  o.detail = fmt::format("precision {:.2f}% recall {:.2f}% over {} planted, {} clean excluded", precision, recall,
                         planted, clean_excluded);
  o.pass = planted > 0 && correct == planted && flagged == planted && clean_excluded == 0;
  return o;
}

Outcome matching_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::int64_t next = 1;
  for (int i = 0; i < kMatchingCases; ++i) {
    const auto img = fixture::random_image(rng, ImageId{1}, next);
    for (double thr : {0.5, 0.75, 0.95}) {
      for (bool aware : {true, false}) {
        const auto greedy = eval::match_instances(img.preds, img.gts, thr, aware).pairs.size();
        const auto best = oracle::brute_force_max_matching(img.preds, img.gts, thr, aware);
        o.require(greedy == best, fmt::format("case {} thr {} aware {}: greedy {} max {}", i, thr, aware, greedy, best));
      }
    }
  }
  // Hand fixture: ranked TP, FP, TP against two GT colonies.
  auto at = [](std::int64_t id, double cx, double cy, double r, double score, Origin origin) {
    return fixture::from_dense(fixture::disc(40, 40, cx, cy, r, r), id, ImageId{1}, ClassLabel::BVGPlus, score, origin);
  };
  eval::ImageEval hand;
  hand.id = ImageId{1};
  hand.gts = {at(1, 10, 10, 4, 1, Origin::GroundTruth), at(2, 30, 30, 4, 1, Origin::GroundTruth)};
  hand.preds = {at(3, 10, 10, 4, 0.9, Origin::Model), at(4, 20, 30, 3, 0.8, Origin::Model),
                at(5, 30, 30, 4, 0.7, Origin::Model)};
  const std::vector<eval::ImageEval> images{hand};
  const auto ap = eval::average_precision(images, ClassLabel::BVGPlus, 0.5, {});
  const double expected = 25300.0 / 303.0;  // 100 * (51 + 50 * 2/3) / 101
  o.require(ap && std::abs(*ap - expected) <= kHandApTol, fmt::format("hand AP {} != {}", ap ? *ap : -1, expected));
  if (o.pass) o.detail = fmt::format("{} cases x 6 settings, hand AP {:.12f}", kMatchingCases, *ap);
  return o;
}

Outcome geometry_oracles() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::uint32_t> side(1, kMaxMaskSide);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < kIouPairs; ++i) {
    const std::uint32_t w = side(rng), h = side(rng);
    DenseMask p(w, h), q(w, h);
    std::bernoulli_distribution on_p(u(rng)), on_q(u(rng));
    for (auto& v : p.pixels) v = on_p(rng) ? 1 : 0;
    for (auto& v : q.pixels) v = on_q(rng) ? 1 : 0;
    const double got = iou_mask(encode(p), encode(q));
    const double want = oracle::dense_iou(p, q);
    o.require(got == want, fmt::format("iou pair {}: {} vs {}", i, got, want));
  }
  for (int i = 0; i < kEllipseCases; ++i) {
    EllipseModel e;
    e.cx = 100 + 400 * u(rng);
    e.cy = 100 + 400 * u(rng);
    e.a = 50 + 300 * u(rng);
    e.b = e.a * (0.3 + 0.6 * u(rng));
    e.theta = std::numbers::pi * u(rng);
    std::vector<Point2> pts;
    const int n = 6 + i % 100;
    const double phase = u(rng), c = std::cos(e.theta), s = std::sin(e.theta);
    for (int k = 0; k < n; ++k) {
      const double t = phase + 2 * std::numbers::pi * k / n;
      const double x = e.a * std::cos(t), y = e.b * std::sin(t);
      pts.push_back({e.cx + c * x - s * y, e.cy + s * x + c * y});
    }
    const EllipseModel f = fit_ellipse(pts);
    double dtheta = std::fmod(std::abs(f.theta - e.theta), std::numbers::pi);
    dtheta = std::min(dtheta, std::numbers::pi - dtheta);
    const double worst = std::max({rel(f.cx, e.cx), rel(f.cy, e.cy), rel(f.a, e.a), rel(f.b, e.b), dtheta});
    o.require(worst <= kEllipseRelTol, fmt::format("ellipse {}: relative error {:.3g}", i, worst));
  }
  for (int i = 0; i < kLaplaceCases; ++i) {
    const int n = std::uniform_int_distribution<int>(2, 80)(rng);
    std::exponential_distribution<double> ex(1.0 / 40);
    std::vector<double> xs;
    for (int k = 0; k < n; ++k) xs.push_back(std::round(200 + (k % 2 ? 1 : -1) * ex(rng)));
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) continue;
    const auto fit = postproc::fit_laplace(xs);
    const auto ref = oracle::numeric_laplace_mle(xs);
    const double ll_fit = oracle::laplace_loglik(xs, fit.mu, fit.b);
    const double ll_ref = oracle::laplace_loglik(xs, ref.mu, ref.b);
    o.require(std::abs(fit.b - ref.b) <= kLaplaceRelTol * ref.b, fmt::format("laplace {}: b {} vs {}", i, fit.b, ref.b));
    o.require(std::abs(ll_fit - ll_ref) <= kLaplaceRelTol * std::abs(ll_ref),
              fmt::format("laplace {}: loglik {} vs {}", i, ll_fit, ll_ref));
  }
  const double q = postproc::laplace_quantile({0, 1}, 0.995);
  o.require(std::abs(q - std::log(100.0)) <= kQuantileTol, fmt::format("quantile {:.17g}", q));
  if (o.pass) o.detail = fmt::format("{} IoU pairs, {} ellipses, {} Laplace samples", kIouPairs, kEllipseCases, kLaplaceCases);
  return o;
}

Outcome metric_invariants() {
  Outcome o;
  std::mt19937_64 rng(99);
  for (int f = 0; f < kInvariantFixtures; ++f) {
    const auto images = fixture::random_images(rng, 4);
    const auto map = eval::mean_average_precision(images, {});
    for (std::size_t t = 1; t < map.thresholds.size(); ++t) {
      if (map.map_at[t] && map.map_at[t - 1]) {
        o.require(*map.map_at[t] <= *map.map_at[t - 1] + 1e-12, fmt::format("fixture {}: mAP rises at {}", f, t));
      }
    }
    for (double k : {1e-3, 0.5, 3.7, 1e4}) {
      auto scaled = images;
      for (auto& img : scaled)
        for (auto& p : img.preds) p.score *= k;
      for (ClassLabel c : kAllLabels) {
        o.require(eval::average_precision(scaled, c, 0.5, {}) == eval::average_precision(images, c, 0.5, {}),
                  fmt::format("fixture {}: AP changes under x{}", f, k));
      }
    }
    const auto m = eval::confusion_matrix(images, {});
    std::int64_t minus = 0, plus = 0;
    for (const auto& [id, c] : eval::count_kept(images, false)) {
      minus += c.minus;
      plus += c.plus;
    }
    o.require(m.row_total(0) == minus && m.row_total(1) == plus, fmt::format("fixture {}: confusion rows", f));

    const auto pred = eval::count_kept(images, true);
    const auto gt = eval::count_kept(images, false);
    for (std::int64_t k : {2, 7, 1000}) {
      eval::CountTable pk, gk;
      for (const auto& [id, c] : pred) pk[id] = {c.minus * k, c.plus * k};
      for (const auto& [id, c] : gt) gk[id] = {c.minus * k, c.plus * k};
      for (auto agg : {eval::MapeAggregation::PerImage, eval::MapeAggregation::Pooled}) {
        const auto a = eval::mape_counts(pred, gt, std::nullopt, agg).value;
        const auto b = eval::mape_counts(pk, gk, std::nullopt, agg).value;
        o.require(a.has_value() == b.has_value() && (!a || std::abs(*a - *b) <= 1e-9 * std::max(1.0, *a)),
                  fmt::format("fixture {}: MAPE changes under x{}", f, k));
      }
    }
  }
  if (o.pass) o.detail = fmt::format("{} fixtures", kInvariantFixtures);
  return o;
}

Outcome quantification() {
  Outcome o;
  Experiment e{"exp", {{{ImageId{1}, ImageId{2}, ImageId{3}}, {0.001}}}, 0};
  const eval::CountTable counts{{ImageId{1}, {0, 90}}, {ImageId{2}, {0, 100}}, {ImageId{3}, {0, 110}}};
  const auto r = quant::aggregate_ci(e, counts);
  const double half = r.plus.ci_high - r.plus.point_estimate;
  o.require(std::abs(r.plus.point_estimate - 100000) <= kQuantPointTol, fmt::format("point {}", r.plus.point_estimate));
  o.require(std::abs(half - kQuantHalfWidth) <= kQuantHalfTol, fmt::format("half width {}", half));
  o.require(std::abs((r.plus.point_estimate - r.plus.ci_low) - kQuantHalfWidth) <= kQuantHalfTol, "asymmetric interval");
  auto has = [](const std::vector<quant::Diagnostic>& ds, const char* code, quant::Severity s) {
    return std::any_of(ds.begin(), ds.end(), [&](const auto& d) { return d.code == code && d.severity == s; });
  };
  Experiment flat = e;
  flat.triplicates.push_back({{ImageId{4}, ImageId{5}, ImageId{6}}, {0.001}});
  o.require(has(quant::validate_experiment(flat), "non_decreasing_dilutions", quant::Severity::Warning),
            "no non-decreasing dilution warning");
  Experiment two{"two", {{{ImageId{1}, ImageId{2}}, {0.001}}}, 0};
  o.require(has(quant::validate_experiment(two), "image_count", quant::Severity::Error), "no image count error");
  if (o.pass) o.detail = fmt::format("{:.3f} +- {:.3f}", r.plus.point_estimate, half);
  return o;
}

Outcome parameter_search() {
  Outcome o;
  std::mt19937_64 rng(5);
  for (int seed = 1; seed <= kSearchSeeds; ++seed) {
    const auto s = synth::search_fixture(static_cast<std::uint64_t>(seed));
    const auto r = search::grid_search(s.dataset, {});
    o.require(r.best_config == postproc::PostProcConfig{}, fmt::format("seed {}: wrong config", seed));
    std::size_t at_min = 0;
    for (const auto& row : r.full_table) at_min += row.objective == r.objective ? 1 : 0;
    o.require(at_min == 1, fmt::format("seed {}: {} configs share the minimum", seed, at_min));
    for (int k = 0; k < 3; ++k) {
      search::SearchSpace space;
      std::shuffle(space.score_threshold.begin(), space.score_threshold.end(), rng);
      std::shuffle(space.dup_iou_threshold.begin(), space.dup_iou_threshold.end(), rng);
      std::shuffle(space.ellipse_shrink.begin(), space.ellipse_shrink.end(), rng);
      std::shuffle(space.laplace_ci.begin(), space.laplace_ci.end(), rng);
      const auto shuffled = search::grid_search(s.dataset, space);
      o.require(shuffled.best_config == r.best_config && shuffled.objective == r.objective,
                fmt::format("seed {}: order changes the result", seed));
    }
    const auto serial = search::grid_search_serial(s.dataset, {});
    o.require(serial.best_config == r.best_config, fmt::format("seed {}: serial reference differs", seed));
  }
  if (o.pass) o.detail = fmt::format("{} fixtures, unique minimum at the planted config", kSearchSeeds);
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome o;
  std::mt19937_64 rng(31337);
  const Dataset base = edits::small_base(31);
  std::size_t total_events = 0;
  for (int i = 0; i < kReplaySequences; ++i) {
    store::Snapshot fin;
    const auto events = edits::random_sequence(rng, base, kReplayLength, &fin);
    total_events += events.size();
    // Through the wire format and back, then folded twice.
    std::vector<store::EditEvent> decoded;
    store::Snapshot s{base, 0, std::nullopt};
    for (const auto& e : events) {
      store::apply_event(s, e);
      decoded.push_back(store::event_from_json(nlohmann::json::parse(store::event_to_json(e, s.dataset).dump()), base));
    }
    const auto a = store::replay(base, decoded);
    const auto b = store::replay(base, events);
    o.require(a == fin && b == fin, fmt::format("sequence {} replays differently", i));
    o.require(interchange::dump_dataset(a.dataset) == interchange::dump_dataset(fin.dataset),
              fmt::format("sequence {} dumps differently", i));
  }

  const fs::path work = fs::temp_directory_path() / "cfu_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(CFU_BINARY) + " " + args + " >" + (work / "out.txt").string() + " 2>" +
                            (work / "err.txt").string();
    const int status = std::system(cmd.c_str());
    return std::pair{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(work / "out.txt")};
  };
  const std::string syn = (work / "syn").string(), post = (work / "post.json").string();
  o.require(run("synth --seed 42 --images 4 --colonies 30 --width 256 --height 256 --out " + syn).first == 0,
            "cli synth failed");
  o.require(run("postprocess --in " + syn + " --out " + post).first == 0, "cli postprocess failed");
  {
    store::Store st(work / "store");
    api::Service svc(st, {work / "syn", [] { return std::int64_t{0}; }});
    const auto created = svc.handle({"POST", "/v1/datasets", {}, slurp(work / "syn/dataset.json")});
    o.require(created.status == 201, "api create failed");
    const std::string ds = nlohmann::json::parse(created.body).value("dataset_id", "");
    o.require(svc.handle({"POST", "/v1/datasets/" + ds + "/postprocess", {}, ""}).status == 200,
              "api postprocess failed");
    o.require(svc.handle({"GET", "/v1/datasets/" + ds + "/export", {}, ""}).body.size() > 0, "api export failed");
    for (const std::string f : {"table", "json"}) {
      const auto cli = run("evaluate --format " + f + " --pred " + post + " --gt " + post);
      const auto api = svc.handle({"POST", "/v1/datasets/" + ds + "/evaluate", {}, "{\"format\": \"" + f + "\"}"});
      o.require(cli.first == 0 && api.status == 200 && cli.second == api.body,
                fmt::format("{} report differs between cli and api", f));
    }
  }
  fs::remove_all(work);
  if (o.pass) o.detail = fmt::format("{} sequences, {} events; cli == api", kReplaySequences, total_events);
  return o;
}

}  // namespace

int main() {
  criterion("C1", "table3_normalization", 0, table3);
  criterion("C2", "postprocess_precision_recall", kPostprocSeconds, postproc_precision_recall);
  criterion("C3", "matching_oracle", 0, matching_oracle);
  criterion("C4", "geometry_oracles", 0, geometry_oracles);
  criterion("C5", "metric_invariants", 0, metric_invariants);
  criterion("C6", "quantification", 0, quantification);
  criterion("C7", "parameter_search", kSearchSeconds, parameter_search);
  criterion("C8", "determinism", 0, determinism);
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
