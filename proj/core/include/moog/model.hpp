#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moog/nn.hpp"

namespace moog {

struct EncoderCfg {
    std::vector<int> channels{64, 128, 128, 256, 256, 512};
    std::vector<int> strides{1, 1, 1, 2, 1, 2};
    int kernel = 3;

    int total_stride() const {
        int s = 1;
        for (int v : strides) s *= v;
        return s;
    }
};

struct BlockCfg {
    int layers = 1;
    int heads = 1;
    int head_dim = 64;
    int mlp_hidden = 2048;

    AttnSpec attn() const { return AttnSpec{heads, head_dim}; }
    BlockSpec spec() const { return BlockSpec{layers, AttnSpec{heads, head_dim}, mlp_hidden}; }
};

// Everything that fixes the architecture: frame size, token set, encoder
// stack, the three transformer stacks, positional-embedding widths, decode
// stride and rollout length. "paper" and "desk" are the built-in profiles;
// tiny() is only for gradient checks.
struct ModelConfig {
    int height = 128, width = 128;
    int tokens = 1024;  // K
    int dim = 512;      // D
    EncoderCfg encoder;
    BlockCfg predictor{3, 4, 64, 2048};
    BlockCfg corrector{2, 8, 64, 2048};
    BlockCfg decoder{6, 2, 64, 2048};
    int encoder_bases = 20;
    int decoder_bases = 16;
    int decode_stride = 8;  // S
    double state_sigma = 1e-4;
    int unroll_len = 8;  // T

    int feat_h() const { return height / encoder.total_stride(); }
    int feat_w() const { return width / encoder.total_stride(); }

    void validate() const {
        MOOG_REQUIRE(tokens >= 1 && dim >= 1, "model: K and D must be at least 1");
        for (const BlockCfg* b : {&predictor, &corrector, &decoder})
            MOOG_REQUIRE(dim % b->heads == 0, "model: token dim must divide by every block's head count");
        MOOG_REQUIRE(encoder.channels.size() == encoder.strides.size(), "model: encoder channels/strides mismatch");
        MOOG_REQUIRE(encoder.channels.back() == dim, "model: final encoder channels must equal token dim");
        int s = encoder.total_stride();
        MOOG_REQUIRE(height % s == 0 && width % s == 0,
                "model: frame " + std::to_string(height) + "x" + std::to_string(width) +
                    " not divisible by encoder stride " + std::to_string(s));
        MOOG_REQUIRE(decode_stride >= 1 && decode_stride <= std::min(height, width), "model: bad decode stride");
    }

    static ModelConfig paper() { return ModelConfig{}; }

    // 32x32 frames, K=64, D=64, head dim 16, MLP 256, encoder channels /8
    static ModelConfig desk() {
        ModelConfig c;
        c.height = c.width = 32;
        c.tokens = 64;
        c.dim = 64;
        c.encoder.channels = {8, 16, 16, 32, 32, 64};
        c.predictor = {3, 2, 16, 256};
        c.corrector = {2, 4, 16, 256};
        c.decoder = {6, 1, 16, 256};
        c.decode_stride = 4;
        return c;
    }

    // smallest config that still exercises every structural piece; used by
    // the finite-difference suite where forward passes run in 64-bit
    static ModelConfig tiny() {
        ModelConfig c;
        c.height = c.width = 8;
        c.tokens = 2;
        c.dim = 8;
        c.encoder.channels = {4, 8};
        c.encoder.strides = {2, 2};
        c.predictor = {1, 1, 4, 8};
        c.corrector = {1, 1, 8, 8};
        c.decoder = {2, 1, 8, 8};
        c.encoder_bases = 3;
        c.decoder_bases = 3;
        c.decode_stride = 4;
        c.unroll_len = 2;
        return c;
    }
};

// Off-the-grid token state. z_c is the corrected state, z_p the predicted
// one; only z_p may be decoded from. K is chosen at rollout start and is
// independent of the parameters.
template <typename T>
struct LatentState {
    Tensor<T> z_c;  // [K, D]
    Tensor<T> z_p;  // [K, D]
    int t = 0;
};

// z_c ~ N(0, sigma^2), z_p zero until the first predictor call
template <typename T>
LatentState<T> init_state(const ModelConfig& cfg, int K, RngState rng) {
    MOOG_REQUIRE(K >= 1 && cfg.dim >= 1, "init_state: K and D must be at least 1");
    LatentState<T> s;
    s.z_c = rng.gaussian_tensor<T>({K, cfg.dim}, cfg.state_sigma);
    s.z_p = Tensor<T>::zeros({K, cfg.dim});
    s.t = 0;
    return s;
}

// ---- parameter construction ----

template <typename T>
void moog_init_params(ParamSet<T>& ps, const ModelConfig& cfg, RngState rng, double residual_scale = 0.0) {
    cfg.validate();
    // encoder CNN + positional projection
    int cin = 3;
    for (size_t i = 0; i < cfg.encoder.channels.size(); ++i) {
        int cout = cfg.encoder.channels[i];
        std::string prefix = "encoder.conv" + std::to_string(i);
        double std = 1.0 / std::sqrt(static_cast<double>(cfg.encoder.kernel * cfg.encoder.kernel * cin));
        ps.emplace(prefix + ".k", rng.child(prefix).template gaussian_tensor<T>(
                                      {cfg.encoder.kernel, cfg.encoder.kernel, cin, cout}, std));
        ps.emplace(prefix + ".b", Tensor<T>::zeros({cout}));
        cin = cout;
    }
    init_linear(ps, "encoder.pos_proj", 2 * (2 * cfg.encoder_bases + 1), cfg.dim, rng.child("encoder.pos_proj"));

    // residual branches start at zero: the predictor opens as the identity
    // and the state distribution stays put while cross-attention content
    // grows in training
    init_block_stack(ps, "predictor", cfg.dim, BlockMode::self_only, cfg.predictor.spec(), rng.child("predictor"),
                     residual_scale);

    init_block_stack(ps, "corrector", cfg.dim, BlockMode::parallel_cross_self, cfg.corrector.spec(),
                     rng.child("corrector"), residual_scale);
    init_layer_norm(ps, "corrector.out_norm", cfg.dim);

    init_linear(ps, "decoder.query_proj", 2 * (2 * cfg.decoder_bases + 1), cfg.dim, rng.child("decoder.query_proj"));
    init_block_stack(ps, "decoder", cfg.dim, BlockMode::cross_only, cfg.decoder.spec(), rng.child("decoder"),
                     residual_scale);
    init_layer_norm(ps, "decoder.out_norm", cfg.dim);
    init_linear(ps, "decoder.head", cfg.dim, 3, rng.child("decoder.head"));
}

// ---- coordinate grids ----

// normalized (x, y): x = col/(W-1), y = row/(H-1)
template <typename T>
Tensor<T> full_grid_coords(int H, int W) {
    Tensor<T> coords({H * W, 2});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            int64_t i = (static_cast<int64_t>(r) * W + c) * 2;
            coords[i] = W > 1 ? static_cast<T>(c) / static_cast<T>(W - 1) : T(0);
            coords[i + 1] = H > 1 ? static_cast<T>(r) / static_cast<T>(H - 1) : T(0);
        }
    return coords;
}

// Strided lattice with one shared integer offset per axis. pixel_index keeps
// the flat row*W+col positions so targets can be sampled at exactly the
// decoded locations.
template <typename T>
struct SubGrid {
    Tensor<T> coords;  // [(H/S)*(W/S), 2] normalized (x, y)
    std::vector<int64_t> pixel_index;
    int rows = 0, cols = 0;
    int offset_y = 0, offset_x = 0;
};

template <typename T>
SubGrid<T> subsample_grid(int H, int W, int S, RngState& rng) {
    MOOG_REQUIRE(S >= 1, "subsample_grid: stride must be positive");
    MOOG_REQUIRE(S <= std::min(H, W), "subsample_grid: stride exceeds frame size");
    SubGrid<T> g;
    g.rows = H / S;
    g.cols = W / S;
    g.offset_y = S == 1 ? 0 : static_cast<int>(rng.next_below(static_cast<uint64_t>(S)));
    g.offset_x = S == 1 ? 0 : static_cast<int>(rng.next_below(static_cast<uint64_t>(S)));
    g.coords = Tensor<T>({g.rows * g.cols, 2});
    g.pixel_index.reserve(static_cast<size_t>(g.rows) * g.cols);
    for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
            int r = g.offset_y + i * S;
            int c = g.offset_x + j * S;
            int64_t n = static_cast<int64_t>(i) * g.cols + j;
            g.coords[n * 2] = W > 1 ? static_cast<T>(c) / static_cast<T>(W - 1) : T(0);
            g.coords[n * 2 + 1] = H > 1 ? static_cast<T>(r) / static_cast<T>(H - 1) : T(0);
            g.pixel_index.push_back(static_cast<int64_t>(r) * W + c);
        }
    return g;
}

// gather frame [H,W,C] at flat pixel indices -> [N, C]
template <typename T>
Tensor<T> sample_frame(const Tensor<T>& frame, const std::vector<int64_t>& pixel_index) {
    int C = frame.last_dim();
    Tensor<T> out({static_cast<int>(pixel_index.size()), C});
    for (size_t n = 0; n < pixel_index.size(); ++n)
        for (int c = 0; c < C; ++c) out[static_cast<int64_t>(n) * C + c] = frame[pixel_index[n] * C + c];
    return out;
}

// ---- forward ops ----

// CNN features + projected Fourier positional embedding, flattened to
// [H'*W', D] for use as cross-attention keys/values.
template <typename T>
Var encode_frame(Ctx<T>& ctx, const ModelConfig& cfg, const Tensor<T>& frame) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(frame.rank() == 3 && frame.dim(2) == 3, "encode_frame: frame must be [H,W,3]");
    int stride = cfg.encoder.total_stride();
    MOOG_REQUIRE(frame.dim(0) % stride == 0 && frame.dim(1) % stride == 0,
            "encode_frame: frame " + shape_str(frame.shape) + " not divisible by encoder stride " +
                std::to_string(stride));
    Var x = tape.constant(frame);
    for (size_t i = 0; i < cfg.encoder.channels.size(); ++i) {
        std::string prefix = "encoder.conv" + std::to_string(i);
        x = tape.conv2d(x, ctx.p(prefix + ".k"), ctx.p(prefix + ".b"), cfg.encoder.strides[i],
                        cfg.encoder.strides[i]);
        if (i + 1 < cfg.encoder.channels.size()) x = tape.gelu(x);
    }
    int fh = frame.dim(0) / stride, fw = frame.dim(1) / stride;
    Var flat = tape.reshape(x, {fh * fw, cfg.dim});
    Var pos = tape.constant(fourier_embed(full_grid_coords<T>(fh, fw), cfg.encoder_bases));
    return tape.add(flat, linear(ctx, pos, "encoder.pos_proj"));
}

// z_p = z_c advanced by the self-attention stack (residuals inside the blocks)
template <typename T>
Var predictor_step(Ctx<T>& ctx, const ModelConfig& cfg, Var z_c) {
    return block_stack(ctx, z_c, std::nullopt, BlockMode::self_only, "predictor", cfg.predictor.spec());
}

// cross+self stack with z_p as queries over the feature grid, then the
// output LayerNorm that keeps long rollouts stable
template <typename T>
Var corrector_step(Ctx<T>& ctx, const ModelConfig& cfg, Var z_p, Var features) {
    Var x = block_stack(ctx, z_p, features, BlockMode::parallel_cross_self, "corrector", cfg.corrector.spec());
    return layer_norm(ctx, x, "corrector.out_norm");
}

template <typename T>
struct DecodeResult {
    Var pixels;                        // [N, 3] in (0,1)
    std::vector<Tensor<T>> attn;       // per decoder layer: [heads, N, K]
    Tensor<T> coords;                  // echo of the query coordinates
};

// coordinate queries -> Fourier embed -> projected queries -> cross-only
// stack over z_p -> rgb head; per-query results are independent of batch
// composition, so any resolution decodes with the same parameters
template <typename T>
DecodeResult<T> decode_tokens(Ctx<T>& ctx, const ModelConfig& cfg, Var tokens, const Tensor<T>& coords,
                              bool want_attn) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(coords.rank() == 2 && coords.dim(1) == 2, "decode: coords must be [N,2]");
    DecodeResult<T> out;
    out.coords = coords;
    Var q = linear(ctx, tape.constant(fourier_embed(coords, cfg.decoder_bases)), "decoder.query_proj");
    std::vector<Tensor<T>> sink;
    q = block_stack(ctx, q, tokens, BlockMode::cross_only, "decoder", cfg.decoder.spec(), want_attn ? &sink : nullptr);
    out.attn = std::move(sink);
    out.pixels = tape.sigmoid(linear(ctx, layer_norm(ctx, q, "decoder.out_norm"), "decoder.head"));
    return out;
}

template <typename T>
DecodeResult<T> decode_pixels(Ctx<T>& ctx, const ModelConfig& cfg, Var z_p, const Tensor<T>& coords,
                              bool want_attn = false) {
    return decode_tokens(ctx, cfg, z_p, coords, want_attn);
}

template <typename T>
struct StepResult {
    Var z_p, z_c;       // next state on the tape
    Var loss;           // mean squared error at the decoded coordinates
    Var features;       // encoded frame, [H'W', D]
    DecodeResult<T> decode;
    SubGrid<T> grid;
};

// One recurrent step: predict, decode from the prediction, score against the
// frame sampled at the same pixels, then correct with the encoded frame. The
// loss sees frame t only through the target.
template <typename T>
StepResult<T> moog_step(Ctx<T>& ctx, const ModelConfig& cfg, Var z_c_prev, const Tensor<T>& frame, RngState& rng,
                        bool want_attn = false) {
    auto& tape = ctx.tape;
    StepResult<T> r;
    r.z_p = predictor_step(ctx, cfg, z_c_prev);
    r.grid = subsample_grid<T>(frame.dim(0), frame.dim(1), cfg.decode_stride, rng);
    r.decode = decode_pixels(ctx, cfg, r.z_p, r.grid.coords, want_attn);
    Var target = tape.constant(sample_frame(frame, r.grid.pixel_index));
    Var diff = tape.sub(r.decode.pixels, target);
    r.loss = tape.mean_all(tape.mul(diff, diff));
    r.features = encode_frame(ctx, cfg, frame);
    r.z_c = corrector_step(ctx, cfg, r.z_p, r.features);
    return r;
}

template <typename T>
struct UnrollResult {
    std::vector<StepResult<T>> steps;
    Var total_loss;  // mean over frames
};

// Sequential rollout from a noise-initialized state. T at inference may
// exceed the training unroll length; K is free per rollout. A caller-supplied
// initial corrected state overrides the noise draw.
template <typename T>
UnrollResult<T> moog_unroll(Ctx<T>& ctx, const ModelConfig& cfg, std::span<const Tensor<T>> frames, int K,
                            RngState rng, bool want_attn = false,
                            const std::optional<Tensor<T>>& z_c0 = std::nullopt) {
    MOOG_REQUIRE(!frames.empty(), "unroll: need at least one frame");
    auto& tape = ctx.tape;
    Tensor<T> init = z_c0 ? *z_c0 : init_state<T>(cfg, K, rng.child("state")).z_c;
    RngState grid_rng = rng.child("grids");
    UnrollResult<T> out;
    Var z_c = tape.constant(init);
    Var sum;
    for (size_t t = 0; t < frames.size(); ++t) {
        StepResult<T> st = moog_step(ctx, cfg, z_c, frames[t], grid_rng, want_attn);
        z_c = st.z_c;
        sum = t == 0 ? st.loss : tape.add(sum, st.loss);
        out.steps.push_back(std::move(st));
    }
    out.total_loss = tape.scale(sum, T(1) / static_cast<T>(frames.size()));
    return out;
}

}  // namespace moog
