#include <benchmark/benchmark.h>

#include "moog/nn.hpp"

namespace {

using namespace moog;

void BM_Matmul(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    auto rng = RngState::from_seed(1);
    TensorF a = rng.child("a").gaussian_tensor<float>({n, n}, 1.0);
    TensorF b = rng.child("b").gaussian_tensor<float>({n, n}, 1.0);
    for (auto _ : state) {
        Tape<float> tape;
        Var c = tape.matmul(tape.constant(a), tape.constant(b));
        benchmark::DoNotOptimize(tape.val(c).data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * static_cast<int64_t>(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionForward(benchmark::State& state) {
    int tokens = static_cast<int>(state.range(0));
    const int dim = 64;
    auto rng = RngState::from_seed(2);
    ParamSetF ps;
    AttnSpec spec{4, 16};
    init_attention(ps, "attn", dim, dim, spec, rng);
    TensorF q = rng.child("q").gaussian_tensor<float>({tokens, dim}, 1.0);
    TensorF kv = rng.child("kv").gaussian_tensor<float>({tokens, dim}, 1.0);
    for (auto _ : state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, false);
        auto out = multi_head_attention(ctx, tape.constant(q), tape.constant(kv), "attn", spec);
        benchmark::DoNotOptimize(tape.val(out.out).data.data());
    }
    state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_AttentionForward)->Arg(64)->Arg(256);

void BM_BlockForwardBackward(benchmark::State& state) {
    const int dim = 64;
    auto rng = RngState::from_seed(3);
    ParamSetF ps;
    AttnSpec spec{4, 16};
    init_block(ps, "blk", dim, BlockMode::parallel_cross_self, spec, 256, rng);
    TensorF x = rng.child("x").gaussian_tensor<float>({64, dim}, 1.0);
    TensorF c = rng.child("c").gaussian_tensor<float>({64, dim}, 1.0);
    for (auto _ : state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, true);
        Var y = transformer_block(ctx, tape.constant(x), tape.constant(c), BlockMode::parallel_cross_self, "blk",
                                  spec);
        Var loss = tape.mean_all(tape.mul(y, y));
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.grad(ctx.p("blk.mlp.fc1.w")).data.data());
    }
}
BENCHMARK(BM_BlockForwardBackward);

}  // namespace
