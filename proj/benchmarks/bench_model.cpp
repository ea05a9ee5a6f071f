#include <benchmark/benchmark.h>

#include "moog/model.hpp"
#include "moog/synth.hpp"

namespace {

using namespace moog;

std::vector<TensorF> desk_frames(int count) {
    SceneConfig scene;
    scene.frames = count;
    auto sample = gen_scene(scene, 7);
    std::vector<TensorF> frames;
    for (int t = 0; t < count; ++t) {
        TensorF f({sample.height, sample.width, 3});
        int64_t n = f.size();
        std::copy_n(sample.frames.data.begin() + static_cast<int64_t>(t) * n, n, f.data.begin());
        frames.push_back(std::move(f));
    }
    return frames;
}

void BM_DeskStepForward(benchmark::State& state) {
    auto cfg = ModelConfig::desk();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(1));
    auto frames = desk_frames(1);
    auto st = init_state<float>(cfg, cfg.tokens, RngState::from_seed(2));
    for (auto _ : state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, false);
        RngState rng = RngState::from_seed(3);
        auto out = moog_step(ctx, cfg, tape.constant(st.z_c), frames[0], rng);
        benchmark::DoNotOptimize(tape.val(out.loss)[0]);
    }
}
BENCHMARK(BM_DeskStepForward);

void BM_DeskUnrollTrain(benchmark::State& state) {
    // one full training sample: 8-frame unroll, forward plus backward
    auto cfg = ModelConfig::desk();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(1));
    auto frames = desk_frames(8);
    for (auto _ : state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, true);
        auto out = moog_unroll<float>(ctx, cfg, frames, cfg.tokens, RngState::from_seed(4));
        tape.backward(out.total_loss);
        benchmark::DoNotOptimize(tape.grad(ctx.p("decoder.head.w")).data.data());
    }
}
BENCHMARK(BM_DeskUnrollTrain);

void BM_DeskFullGridDecode(benchmark::State& state) {
    auto cfg = ModelConfig::desk();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(1));
    auto st = init_state<float>(cfg, cfg.tokens, RngState::from_seed(2));
    TensorF coords = full_grid_coords<float>(cfg.height, cfg.width);
    for (auto _ : state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, false);
        Var z_p = predictor_step(ctx, cfg, tape.constant(st.z_c));
        auto dec = decode_pixels(ctx, cfg, z_p, coords, false);
        benchmark::DoNotOptimize(tape.val(dec.pixels).data.data());
    }
    state.SetItemsProcessed(state.iterations() * cfg.height * cfg.width);
}
BENCHMARK(BM_DeskFullGridDecode);

}  // namespace
