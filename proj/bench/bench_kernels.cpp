// Parallel kernels against their serial references.

#include <map>
#include <random>

#include <benchmark/benchmark.h>

#include "cfu/evaluation.hpp"
#include "cfu/geometry.hpp"
#include "cfu/param_search.hpp"
#include "cfu/postproc.hpp"
#include "cfu/synthbench.hpp"
#include "fixtures.hpp"

using namespace cfu;

namespace {

const Dataset& planted(int images) {
  static std::map<int, Dataset> cache;
  auto it = cache.find(images);
  if (it == cache.end()) {
    synth::SynthConfig cfg;
    cfg.seed = 1;
    cfg.perturbation = synth::planted_perturbation();
    it = cache.emplace(images, synth::generate_dataset(cfg, images).dataset).first;
  }
  return it->second;
}

const std::vector<eval::ImageEval>& eval_images() {
  static const auto images = [] {
    const Dataset& d = planted(16);
    return eval::collect(d, d);
  }();
  return images;
}

const Dataset& search_data() {
  static const Dataset d = synth::search_fixture(1).dataset;
  return d;
}

void BM_Postprocess(benchmark::State& st) {
  const Dataset& d = planted(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(postproc::run_dataset(d, {}));
}
void BM_PostprocessSerial(benchmark::State& st) {
  const Dataset& d = planted(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(postproc::run_dataset_serial(d, {}));
}
void BM_Evaluate(benchmark::State& st) {
  eval_images();
  for (auto _ : st) benchmark::DoNotOptimize(eval::evaluate(eval_images(), {}));
}
void BM_EvaluateSerial(benchmark::State& st) {
  eval_images();
  for (auto _ : st) benchmark::DoNotOptimize(eval::evaluate_serial(eval_images(), {}));
}
// Fixtures are built before the timed loop.
void BM_GridSearch(benchmark::State& st) {
  search_data();
  for (auto _ : st) benchmark::DoNotOptimize(search::grid_search(search_data(), {}));
}
void BM_GridSearchSerial(benchmark::State& st) {
  search_data();
  for (auto _ : st) benchmark::DoNotOptimize(search::grid_search_serial(search_data(), {}));
}
void BM_MaskIou(benchmark::State& st) {
  const auto side = static_cast<std::uint32_t>(st.range(0));
  const DenseMask a = fixture::disc(side, side, side * 0.45, side * 0.5, side * 0.3, side * 0.3);
  const DenseMask b = fixture::disc(side, side, side * 0.55, side * 0.5, side * 0.3, side * 0.3);
  const RleMask ra = encode(a), rb = encode(b);
  for (auto _ : st) benchmark::DoNotOptimize(iou_mask(ra, rb));
}

}  // namespace

BENCHMARK(BM_Postprocess)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PostprocessSerial)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaskIou)->Arg(64)->Arg(512);

BENCHMARK_MAIN();
