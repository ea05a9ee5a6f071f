#include <benchmark/benchmark.h>

#include "moog/synth.hpp"

namespace {

using namespace moog;

void BM_GenScene(benchmark::State& state) {
    SceneConfig cfg;
    cfg.frames = static_cast<int>(state.range(0));
    uint64_t seed = 0;
    for (auto _ : state) {
        auto sample = gen_scene(cfg, seed++);
        benchmark::DoNotOptimize(sample.frames.data.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GenScene)->Arg(8)->Arg(36);

void BM_RandomCrop(benchmark::State& state) {
    SceneConfig cfg;
    cfg.frames = 8;
    auto sample = gen_scene(cfg, 5);
    RngState rng = RngState::from_seed(9);
    for (auto _ : state) {
        auto out = random_crop(sample, rng, 32, 32);
        benchmark::DoNotOptimize(out.frames.data.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RandomCrop);

}  // namespace

BENCHMARK_MAIN();
