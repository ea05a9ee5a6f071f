#include <doctest.h>

#include "fd_check.hpp"
#include "moog/model.hpp"

using namespace moog;
using moog::testing::fd_compare;

namespace {

template <typename T>
Tensor<T> random_frame(RngState rng, int H, int W) {
    Tensor<T> f({H, W, 3});
    for (auto& v : f.data) v = static_cast<T>(rng.next_uniform());
    return f;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<int>& perm) {
    int D = x.last_dim();
    Tensor<T> out(x.shape);
    for (size_t i = 0; i < perm.size(); ++i)
        for (int j = 0; j < D; ++j)
            out[static_cast<int64_t>(i) * D + j] = x[static_cast<int64_t>(perm[i]) * D + j];
    return out;
}

std::vector<int> rotate_perm(int n, int shift) {
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = (i + shift) % n;
    return p;
}

void zero_output_projections(ParamSetD& ps) {
    for (auto& e : ps)
        if (e.name.find(".wo.") != std::string::npos || e.name.find(".mlp.fc2.") != std::string::npos)
            for (auto& v : e.tensor.data) v = 0.0;
}

}  // namespace

TEST_CASE("profiles validate and report feature-grid geometry") {
    ModelConfig paper = ModelConfig::paper();
    paper.validate();
    CHECK(paper.feat_h() == 32);
    CHECK(paper.feat_w() == 32);
    ModelConfig desk = ModelConfig::desk();
    desk.validate();
    CHECK(desk.feat_h() == 8);
    CHECK(desk.tokens == 64);
    ModelConfig::tiny().validate();
}

TEST_CASE("init_state: deterministic, scaled, K-independent") {
    auto cfg = ModelConfig::desk();
    auto a = init_state<float>(cfg, 64, RngState::from_seed(5));
    auto b = init_state<float>(cfg, 64, RngState::from_seed(5));
    for (int64_t i = 0; i < a.z_c.size(); ++i) CHECK(a.z_c[i] == b.z_c[i]);
    for (auto v : a.z_p.data) CHECK(v == 0.f);
    CHECK(a.t == 0);

    // sample std within [0.5e-4, 2e-4] once K*D >= 4096
    double sq = 0;
    for (auto v : a.z_c.data) sq += static_cast<double>(v) * v;
    double std = std::sqrt(sq / static_cast<double>(a.z_c.size()));
    CHECK(std > 0.5e-4);
    CHECK(std < 2e-4);

    // parameter set never depends on K; both small and large states roll
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(1), 1.0);
    for (int K : {16, 1024}) {
        Tape<float> tape;
        Ctx<float> ctx(tape, ps, false);
        auto st = init_state<float>(cfg, K, RngState::from_seed(2));
        Var z_p = predictor_step(ctx, cfg, tape.constant(st.z_c));
        CHECK(tape.val(z_p).shape == std::vector<int>({K, cfg.dim}));
    }
}

TEST_CASE("encode_frame: geometry, determinism, translation sensitivity") {
    auto cfg = ModelConfig::desk();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(3), 1.0);
    auto frame = random_frame<float>(RngState::from_seed(9), cfg.height, cfg.width);

    Tape<float> tape;
    Ctx<float> ctx(tape, ps, false);
    Var f1 = encode_frame(ctx, cfg, frame);
    CHECK(tape.val(f1).shape == std::vector<int>({cfg.feat_h() * cfg.feat_w(), cfg.dim}));

    Var f2 = encode_frame(ctx, cfg, frame);
    for (int64_t i = 0; i < tape.val(f1).size(); ++i) CHECK(tape.val(f1)[i] == tape.val(f2)[i]);

    // translate the frame by 4 pixels; positional embedding must break equivariance
    Tensor<float> shifted({cfg.height, cfg.width, 3});
    for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c)
            for (int ch = 0; ch < 3; ++ch)
                shifted[(static_cast<int64_t>(r) * cfg.width + c) * 3 + ch] =
                    frame[(static_cast<int64_t>(r) * cfg.width + (c + 4) % cfg.width) * 3 + ch];
    Var f3 = encode_frame(ctx, cfg, shifted);
    double max_diff = 0;
    for (int64_t i = 0; i < tape.val(f1).size(); ++i)
        max_diff = std::max(max_diff, std::abs(static_cast<double>(tape.val(f1)[i]) - tape.val(f3)[i]));
    CHECK(max_diff > 1e-4);

    Tensor<float> bad({cfg.height - 2, cfg.width, 3});
    CHECK_THROWS_WITH_AS(encode_frame(ctx, cfg, bad), doctest::Contains("divisible"), std::runtime_error);
}

TEST_CASE("predictor_step: zeroed projections reduce to identity") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(4), 1.0);
    zero_output_projections(ps);
    Tape<double> tape;
    Ctx<double> ctx(tape, ps, false);
    auto st = init_state<double>(cfg, 5, RngState::from_seed(6));
    TensorD z_p = tape.val(predictor_step(ctx, cfg, tape.constant(st.z_c)));
    for (int64_t i = 0; i < z_p.size(); ++i) CHECK(z_p[i] == doctest::Approx(st.z_c[i]));
}

TEST_CASE("predictor_step: permutation equivariance") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(8), 1.0);
    Tape<double> tape;
    Ctx<double> ctx(tape, ps, false);
    TensorD z = RngState::from_seed(10).gaussian_tensor<double>({6, cfg.dim}, 1.0);
    auto perm = rotate_perm(6, 2);
    TensorD a = tape.val(predictor_step(ctx, cfg, tape.constant(z)));
    TensorD b = tape.val(predictor_step(ctx, cfg, tape.constant(permute_rows(z, perm))));
    TensorD a_perm = permute_rows(a, perm);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a_perm[i]).epsilon(1e-9));
}

TEST_CASE("predictor_step: gradients match finite differences") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(12), 1.0);
    TensorD z = RngState::from_seed(13).gaussian_tensor<double>({3, cfg.dim}, 1.0);
    auto loss = [&](const ParamSetD& p) {
        Tape<double> tape;
        Ctx<double> ctx(tape, p);
        return tape.val(tape.sum_all(predictor_step(ctx, cfg, tape.constant(z))))[0];
    };
    Tape<double> tape;
    Ctx<double> ctx(tape, ps);
    tape.backward(tape.sum_all(predictor_step(ctx, cfg, tape.constant(z))));
    auto rep = fd_compare(loss, ps, ctx.collect_grads(ps));
    INFO("worst ", rep.worst_param, " rel ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("corrector_step: output is layer-normalized and attention-symmetric") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(14), 1.0);
    Tape<double> tape;
    Ctx<double> ctx(tape, ps, false);
    auto rng = RngState::from_seed(15);
    TensorD z_p = rng.child("z").gaussian_tensor<double>({4, cfg.dim}, 1.0);
    TensorD feat = rng.child("f").gaussian_tensor<double>({6, cfg.dim}, 1.0);

    TensorD z_c = tape.val(corrector_step(ctx, cfg, tape.constant(z_p), tape.constant(feat)));
    // gamma=1, beta=0 at init: per-token mean ~0, variance ~1
    int D = cfg.dim;
    for (int r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int j = 0; j < D; ++j) mean += z_c[r * D + j];
        mean /= D;
        for (int j = 0; j < D; ++j) var += (z_c[r * D + j] - mean) * (z_c[r * D + j] - mean);
        var /= D;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-2));
    }

    // permuting queries permutes outputs; permuting features changes nothing
    auto perm = rotate_perm(4, 1);
    TensorD z_c_q = tape.val(corrector_step(ctx, cfg, tape.constant(permute_rows(z_p, perm)), tape.constant(feat)));
    TensorD expect = permute_rows(z_c, perm);
    for (int64_t i = 0; i < z_c.size(); ++i) CHECK(z_c_q[i] == doctest::Approx(expect[i]).epsilon(1e-9));

    auto fperm = rotate_perm(6, 3);
    TensorD z_c_f = tape.val(corrector_step(ctx, cfg, tape.constant(z_p), tape.constant(permute_rows(feat, fperm))));
    for (int64_t i = 0; i < z_c.size(); ++i) CHECK(z_c_f[i] == doctest::Approx(z_c[i]).epsilon(1e-9));
}

TEST_CASE("corrector_step: gradient check on a 2-token instance") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(16), 1.0);
    auto rng = RngState::from_seed(17);
    TensorD z_p = rng.child("z").gaussian_tensor<double>({2, cfg.dim}, 1.0);
    TensorD feat = rng.child("f").gaussian_tensor<double>({4, cfg.dim}, 1.0);
    auto loss = [&](const ParamSetD& p) {
        Tape<double> tape;
        Ctx<double> ctx(tape, p);
        Var y = corrector_step(ctx, cfg, tape.constant(z_p), tape.constant(feat));
        return tape.val(tape.sum_all(tape.mul(y, y)))[0];
    };
    Tape<double> tape;
    Ctx<double> ctx(tape, ps);
    Var y = corrector_step(ctx, cfg, tape.constant(z_p), tape.constant(feat));
    tape.backward(tape.sum_all(tape.mul(y, y)));
    auto rep = fd_compare(loss, ps, ctx.collect_grads(ps));
    INFO("worst ", rep.worst_param, " rel ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("subsample_grid: construction invariants") {
    auto rng = RngState::from_seed(18);
    // S=1 -> full grid with forced zero offset
    auto g1 = subsample_grid<float>(8, 8, 1, rng);
    CHECK(g1.coords.dim(0) == 64);
    CHECK(g1.offset_x == 0);
    CHECK(g1.offset_y == 0);

    // 128/8 -> 256 coordinates
    auto g2 = subsample_grid<float>(128, 128, 8, rng);
    CHECK(g2.coords.dim(0) == 256);

    // all normalized, row spacing exactly S/(W-1)
    for (int64_t i = 0; i < g2.coords.size(); ++i) {
        CHECK(g2.coords[i] >= 0.f);
        CHECK(g2.coords[i] <= 1.f);
    }
    for (int j = 1; j < g2.cols; ++j) {
        float dx = g2.coords[static_cast<int64_t>(j) * 2] - g2.coords[(static_cast<int64_t>(j) - 1) * 2];
        CHECK(dx == doctest::Approx(8.f / 127.f));
    }
    CHECK_THROWS_AS(subsample_grid<float>(4, 4, 5, rng), std::runtime_error);

    // offsets eventually cover [0, S)
    bool seen_nonzero = false;
    for (int i = 0; i < 32; ++i) {
        auto g = subsample_grid<float>(32, 32, 4, rng);
        CHECK(g.offset_x < 4);
        CHECK(g.offset_y < 4);
        seen_nonzero = seen_nonzero || g.offset_x != 0 || g.offset_y != 0;
    }
    CHECK(seen_nonzero);
}

TEST_CASE("decode: per-query independence, token permutation, resolution freedom") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(19), 1.0);
    TensorD z_p = RngState::from_seed(20).gaussian_tensor<double>({4, cfg.dim}, 1.0);

    Tape<double> tape;
    Ctx<double> ctx(tape, ps, false);
    TensorD coords = full_grid_coords<double>(4, 4);  // 16 queries
    auto batched = decode_pixels(ctx, cfg, tape.constant(z_p), coords, true);

    // decoding one coordinate at a time reproduces the matching rows bit-exactly
    for (int n = 0; n < 16; n += 5) {
        TensorD single({1, 2}, {coords[n * 2], coords[n * 2 + 1]});
        auto one = decode_pixels(ctx, cfg, tape.constant(z_p), single, false);
        for (int c = 0; c < 3; ++c) CHECK(tape.val(one.pixels)[c] == tape.val(batched.pixels)[n * 3 + c]);
    }

    // permuting tokens leaves pixels unchanged and permutes the attention K axis
    auto perm = rotate_perm(4, 1);
    auto permuted = decode_pixels(ctx, cfg, tape.constant(permute_rows(z_p, perm)), coords, true);
    for (int64_t i = 0; i < tape.val(batched.pixels).size(); ++i)
        CHECK(tape.val(permuted.pixels)[i] == doctest::Approx(tape.val(batched.pixels)[i]).epsilon(1e-9));
    REQUIRE(batched.attn.size() == static_cast<size_t>(cfg.decoder.layers));
    const TensorD& w0 = batched.attn[0];
    const TensorD& w1 = permuted.attn[0];
    int heads = cfg.decoder.heads, N = 16, K = 4;
    for (int h = 0; h < heads; ++h)
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k)
                CHECK(w1[(static_cast<int64_t>(h) * N + n) * K + k] ==
                      doctest::Approx(w0[(static_cast<int64_t>(h) * N + n) * K + perm[static_cast<size_t>(k)]])
                          .epsilon(1e-9));

    // denser grid decodes with unchanged parameters
    auto dense = decode_pixels(ctx, cfg, tape.constant(z_p), full_grid_coords<double>(8, 8), false);
    CHECK(tape.val(dense.pixels).shape == std::vector<int>({64, 3}));
    for (auto v : tape.val(dense.pixels).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("step: loss equals the mse against the frame sampled at the decode grid") {
    auto cfg = ModelConfig::tiny();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(21), 1.0);
    auto frame = random_frame<float>(RngState::from_seed(22), cfg.height, cfg.width);
    Tape<float> tape;
    Ctx<float> ctx(tape, ps, false);
    auto st = init_state<float>(cfg, 3, RngState::from_seed(23));
    RngState grid_rng = RngState::from_seed(24);
    auto r = moog_step(ctx, cfg, tape.constant(st.z_c), frame, grid_rng);

    auto target = sample_frame(frame, r.grid.pixel_index);
    const TensorF& pix = tape.val(r.decode.pixels);
    double mse = 0;
    for (int64_t i = 0; i < pix.size(); ++i) {
        double d = static_cast<double>(pix[i]) - target[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pix.size());
    CHECK(tape.val(r.loss)[0] == doctest::Approx(mse).epsilon(1e-5));

    // an exact reconstruction scores zero
    Tape<float> t2;
    Var pred = t2.constant(target);
    Var diff = t2.sub(pred, t2.constant(target));
    CHECK(t2.val(t2.mean_all(t2.mul(diff, diff)))[0] == 0.f);
}

TEST_CASE("unroll: T=1 reduces to a single step") {
    auto cfg = ModelConfig::tiny();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(25), 1.0);
    std::vector<TensorF> frames{random_frame<float>(RngState::from_seed(26), cfg.height, cfg.width)};
    Tape<float> tape;
    Ctx<float> ctx(tape, ps, false);
    auto out = moog_unroll<float>(ctx, cfg, frames, 3, RngState::from_seed(27));
    CHECK(out.steps.size() == 1);
    CHECK(tape.val(out.total_loss)[0] == doctest::Approx(tape.val(out.steps[0].loss)[0]));
}

TEST_CASE("unroll: runs far beyond the training length") {
    auto cfg = ModelConfig::tiny();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(28), 1.0);
    std::vector<TensorF> frames;
    auto rng = RngState::from_seed(29);
    for (int t = 0; t < 36; ++t) frames.push_back(random_frame<float>(rng.child_index(t), cfg.height, cfg.width));
    Tape<float> tape;
    Ctx<float> ctx(tape, ps, false);
    auto out = moog_unroll<float>(ctx, cfg, frames, 4, RngState::from_seed(30));
    CHECK(out.steps.size() == 36);
    CHECK(std::isfinite(tape.val(out.total_loss)[0]));
}

TEST_CASE("unroll: token permutation leaves every decoded pixel unchanged") {
    auto cfg = ModelConfig::tiny();
    ParamSetF ps;
    moog_init_params(ps, cfg, RngState::from_seed(31), 1.0);
    std::vector<TensorF> frames;
    auto rng = RngState::from_seed(32);
    for (int t = 0; t < 3; ++t) frames.push_back(random_frame<float>(rng.child_index(t), cfg.height, cfg.width));

    const int K = 6;
    auto st = init_state<float>(cfg, K, RngState::from_seed(33));
    auto perm = rotate_perm(K, 2);

    Tape<float> t1;
    Ctx<float> c1(t1, ps, false);
    auto a = moog_unroll<float>(c1, cfg, frames, K, RngState::from_seed(34), false, st.z_c);
    Tape<float> t2;
    Ctx<float> c2(t2, ps, false);
    auto b = moog_unroll<float>(c2, cfg, frames, K, RngState::from_seed(34), false, permute_rows(st.z_c, perm));

    for (size_t s = 0; s < a.steps.size(); ++s) {
        const TensorF& pa = t1.val(a.steps[s].decode.pixels);
        const TensorF& pb = t2.val(b.steps[s].decode.pixels);
        for (int64_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) <= 1e-5);
        // latent states are permuted by the same permutation
        TensorF zc_perm = permute_rows(t1.val(a.steps[s].z_c), perm);
        const TensorF& zb = t2.val(b.steps[s].z_c);
        for (int64_t i = 0; i < zb.size(); ++i) CHECK(std::abs(zb[i] - zc_perm[i]) <= 1e-4);
    }
}

TEST_CASE("step: gradients of the full step loss match finite differences") {
    auto cfg = ModelConfig::tiny();
    ParamSetD ps;
    moog_init_params(ps, cfg, RngState::from_seed(35), 1.0);
    auto frame = random_frame<double>(RngState::from_seed(36), cfg.height, cfg.width);
    auto st = init_state<double>(cfg, 2, RngState::from_seed(37));

    auto run = [&](Ctx<double>& ctx) {
        RngState grid_rng = RngState::from_seed(38);
        auto r = moog_step(ctx, cfg, ctx.tape.constant(st.z_c), frame, grid_rng);
        // fold the corrected state in so corrector params receive gradients
        return ctx.tape.add(r.loss, ctx.tape.scale(ctx.tape.mean_all(ctx.tape.mul(r.z_c, r.z_c)), 1e-2));
    };
    auto loss = [&](const ParamSetD& p) {
        Tape<double> tape;
        Ctx<double> ctx(tape, p);
        return tape.val(run(ctx))[0];
    };
    Tape<double> tape;
    Ctx<double> ctx(tape, ps);
    tape.backward(run(ctx));
    auto rep = fd_compare(loss, ps, ctx.collect_grads(ps));
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] ad ", rep.ad, " fd ", rep.fd);
    CHECK(rep.max_rel_err < 1e-4);
}
