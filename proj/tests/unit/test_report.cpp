#include <doctest.h>

#include <nlohmann/json.hpp>

#include "cfu/report.hpp"
#include "cfu/synthbench.hpp"

using namespace cfu;

namespace {

eval::EvalReport identity_report() {
  synth::SynthConfig cfg;
  cfg.seed = 8;
  cfg.n_colonies = 15;
  const auto s = synth::generate_dataset(cfg, 2);
  return eval::evaluate(eval::collect(s.dataset, s.dataset), {});
}

}  // namespace

TEST_CASE("format names") {
  CHECK(report::parse_format("table") == report::Format::Table);
  CHECK(report::parse_format("json") == report::Format::Json);
  CHECK_FALSE(report::parse_format("xml"));
}

TEST_CASE("table report layout") {
  const std::string t = report::render_eval_report(identity_report(), report::Format::Table);
  CHECK(t.rfind("Benchmarks (%)\n", 0) == 0);
  CHECK(t.find("mAP IoU=.50:.05:.95        100.0\n") != std::string::npos);
  CHECK(t.find("MAPE Tot                     0.0\n") != std::string::npos);
  CHECK(t.find("\nConfusion matrix\n") != std::string::npos);
  CHECK(t.find("\nNormalised confusion matrix (% of row)\n") != std::string::npos);
  CHECK(t.find("Invented                     0               0         -\n") != std::string::npos);
  CHECK(t.find("\nPer-image counts (predicted / actual)\n") != std::string::npos);
}

TEST_CASE("json report carries the same data") {
  const auto r = identity_report();
  const auto j = nlohmann::json::parse(report::render_eval_report(r, report::Format::Json));
  CHECK(j["map_avg"].get<double>() == doctest::Approx(100.0));
  CHECK(j["map_at"].size() == 10);
  CHECK(j["mape"]["total"]["value"].get<double>() == 0.0);
  CHECK(j["confusion"]["counts"].size() == 3);
  CHECK(j["per_image_counts"].size() == 2);
  CHECK_FALSE(j.contains("variability"));
}

TEST_CASE("postprocess summary") {
  synth::SynthConfig cfg;
  cfg.seed = 2;
  cfg.perturbation = synth::planted_perturbation();
  auto s = synth::generate_dataset(cfg, 1);
  postproc::apply_results(s.dataset, postproc::run_dataset(s.dataset, {}));
  const auto sum = report::summarize(s.dataset);
  std::size_t excluded = 0;
  for (auto c : sum.excluded) excluded += c;
  CHECK(sum.kept + excluded == sum.predictions);
  CHECK(excluded == s.planted_violations.size());
  const auto j = report::postproc_summary_json(sum);
  CHECK(j["excluded"].size() == kExclusionReasonCount);
  const std::string t = report::render_postproc_summary(sum, report::Format::Table);
  CHECK(t.rfind("images                         1\n", 0) == 0);
}
