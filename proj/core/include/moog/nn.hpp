#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "moog/params.hpp"
#include "moog/rng.hpp"
#include "moog/tape.hpp"

namespace moog {

// One forward/backward pass over a fixed tape. Parameters enter the graph as
// leaves exactly once per pass (cached by name), so weight sharing across an
// unroll accumulates gradients on a single node. Multiple sources let a pass
// mix a frozen backbone with trainable readout heads.
template <typename T>
struct Ctx {
    struct Source {
        const ParamSet<T>* set;
        bool trainable;
    };

    Tape<T>& tape;
    std::vector<Source> sources;
    std::unordered_map<std::string, Var> cache;

    Ctx(Tape<T>& t, const ParamSet<T>& params, bool trainable = true) : tape(t) {
        sources.push_back({&params, trainable});
    }
    Ctx(Tape<T>& t, std::vector<Source> srcs) : tape(t), sources(std::move(srcs)) {}

    Var p(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        for (const Source& s : sources) {
            if (s.set->contains(name)) {
                const auto& e = s.set->entry(name);
                Var v = tape.leaf(e.tensor, s.trainable && e.trainable);
                cache.emplace(name, v);
                return v;
            }
        }
        fail("parameter not found in any source: " + name);
    }

    // gradients for `params`, name-aligned; parameters unused in the pass get zeros
    ParamSet<T> collect_grads(const ParamSet<T>& params) const {
        ParamSet<T> grads = params.zeros_like();
        for (const auto& e : params) {
            auto it = cache.find(e.name);
            if (it != cache.end() && tape.requires_grad(it->second)) grads.at(e.name) = tape.grad(it->second);
        }
        return grads;
    }
};

// ---- parameter initialization ----

template <typename T>
void init_linear(ParamSet<T>& ps, const std::string& prefix, int din, int dout, RngState rng, double scale = 1.0) {
    double std = scale / std::sqrt(static_cast<double>(din));
    ps.emplace(prefix + ".w", rng.child("w").template gaussian_tensor<T>({din, dout}, std));
    ps.emplace(prefix + ".b", Tensor<T>::zeros({dout}));
}

template <typename T>
void init_layer_norm(ParamSet<T>& ps, const std::string& prefix, int d) {
    ps.emplace(prefix + ".gamma", Tensor<T>::full({d}, T(1)));
    ps.emplace(prefix + ".beta", Tensor<T>::zeros({d}));
}

// ---- nn-core ops over the tape ----

// y = x w + b, broadcasting over leading dims of x
template <typename T>
Var linear(Ctx<T>& ctx, Var x, const std::string& prefix) {
    Var w = ctx.p(prefix + ".w");
    Var b = ctx.p(prefix + ".b");
    const auto& xs = ctx.tape.val(x).shape;
    int din = xs.back();
    MOOG_REQUIRE(din == ctx.tape.val(w).dim(0),
            "linear " + prefix + ": input " + shape_str(xs) + " vs weight " + shape_str(ctx.tape.val(w).shape));
    int dout = ctx.tape.val(w).dim(1);
    int64_t rows = ctx.tape.val(x).rows_flat();
    Var flat = ctx.tape.reshape(x, {static_cast<int>(rows), din});
    Var y = ctx.tape.add_rowvec(ctx.tape.matmul(flat, w), b);
    std::vector<int> oshape(xs.begin(), xs.end() - 1);
    oshape.push_back(dout);
    return ctx.tape.reshape(y, oshape);
}

template <typename T>
Var layer_norm(Ctx<T>& ctx, Var x, const std::string& prefix, T eps = T(1e-5)) {
    return ctx.tape.layer_norm(x, ctx.p(prefix + ".gamma"), ctx.p(prefix + ".beta"), eps);
}

struct AttnSpec {
    int heads = 1;
    int head_dim = 64;
    int width() const { return heads * head_dim; }
};

// out_scale shrinks (or zeroes) the output projection so residual branches
// start near identity; recurrent stacks train from a stable state
// distribution that way
template <typename T>
void init_attention(ParamSet<T>& ps, const std::string& prefix, int d_q, int d_kv, AttnSpec spec, RngState rng,
                    double out_scale = 1.0) {
    init_linear(ps, prefix + ".wq", d_q, spec.width(), rng.child("q"));
    init_linear(ps, prefix + ".wk", d_kv, spec.width(), rng.child("k"));
    init_linear(ps, prefix + ".wv", d_kv, spec.width(), rng.child("v"));
    init_linear(ps, prefix + ".wo", spec.width(), d_q, rng.child("o"), out_scale);
}

template <typename T>
struct AttnOut {
    Var out;      // [Nq, Dq]
    Var weights;  // [heads, Nq, Nk], rows sum to 1
};

// Scaled dot-product attention with RMS-normalized queries and keys.
template <typename T>
AttnOut<T> multi_head_attention(Ctx<T>& ctx, Var q_in, Var kv_in, const std::string& prefix, AttnSpec spec,
                                T eps = T(1e-6)) {
    auto& tape = ctx.tape;
    const auto& qs = tape.val(q_in).shape;
    const auto& ks = tape.val(kv_in).shape;
    MOOG_REQUIRE(qs.size() == 2 && ks.size() == 2, "attention expects rank-2 token sets");
    MOOG_REQUIRE(ks[0] > 0, "attention " + prefix + ": empty context");
    int Nq = qs[0], Nk = ks[0], H = spec.heads, dh = spec.head_dim;

    auto split = [&](Var x, int N) {
        // [N, H*dh] -> [H, N, dh]
        return tape.transpose01(tape.reshape(x, {N, H, dh}));
    };
    Var q = split(linear(ctx, q_in, prefix + ".wq"), Nq);
    Var k = split(linear(ctx, kv_in, prefix + ".wk"), Nk);
    Var v = split(linear(ctx, kv_in, prefix + ".wv"), Nk);

    q = tape.rms_norm_last(q, eps);
    k = tape.rms_norm_last(k, eps);

    Var scores = tape.scale(tape.bmm_nt(q, k), T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh))));
    Var w = tape.softmax_last(scores);                       // [H, Nq, Nk]
    Var o = tape.reshape(tape.transpose01(tape.bmm(w, v)),    // [Nq, H, dh]
                         {Nq, H * dh});
    return {linear(ctx, o, prefix + ".wo"), w};
}

enum class BlockMode { self_only, cross_only, parallel_cross_self };

struct BlockSpec {
    int layers = 1;
    AttnSpec attn;
    int mlp_hidden = 2048;
};

template <typename T>
void init_block(ParamSet<T>& ps, const std::string& prefix, int d, BlockMode mode, const AttnSpec& attn,
                int mlp_hidden, RngState rng, double out_scale = 1.0) {
    init_layer_norm(ps, prefix + ".ln_attn", d);
    if (mode != BlockMode::cross_only) init_attention(ps, prefix + ".self", d, d, attn, rng.child("self"), out_scale);
    if (mode != BlockMode::self_only) {
        init_layer_norm(ps, prefix + ".ln_kv", d);
        init_attention(ps, prefix + ".cross", d, d, attn, rng.child("cross"), out_scale);
    }
    init_layer_norm(ps, prefix + ".ln_mlp", d);
    init_linear(ps, prefix + ".mlp.fc1", d, mlp_hidden, rng.child("fc1"));
    init_linear(ps, prefix + ".mlp.fc2", mlp_hidden, d, rng.child("fc2"), out_scale);
}

template <typename T>
Var mlp2(Ctx<T>& ctx, Var x, const std::string& prefix) {
    return linear(ctx, ctx.tape.gelu(linear(ctx, x, prefix + ".fc1")), prefix + ".fc2");
}

// Pre-LN residual block. In parallel mode the self- and cross-attention
// outputs share one residual add; the MLP path stays separate.
template <typename T>
Var transformer_block(Ctx<T>& ctx, Var q_tokens, std::optional<Var> context, BlockMode mode,
                      const std::string& prefix, const AttnSpec& attn,
                      std::vector<Tensor<T>>* attn_sink = nullptr) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(mode == BlockMode::self_only || context.has_value(),
            "transformer_block " + prefix + ": cross mode requires context");
    Var h = layer_norm(ctx, q_tokens, prefix + ".ln_attn");
    std::optional<Var> a;
    if (mode != BlockMode::cross_only) {
        a = multi_head_attention(ctx, h, h, prefix + ".self", attn).out;
    }
    if (mode != BlockMode::self_only) {
        Var kv = layer_norm(ctx, *context, prefix + ".ln_kv");
        AttnOut<T> c = multi_head_attention(ctx, h, kv, prefix + ".cross", attn);
        if (attn_sink) attn_sink->push_back(tape.val(c.weights));
        a = a ? tape.add(*a, c.out) : c.out;
    }
    Var x = tape.add(q_tokens, *a);
    return tape.add(x, mlp2(ctx, layer_norm(ctx, x, prefix + ".ln_mlp"), prefix + ".mlp"));
}

template <typename T>
void init_block_stack(ParamSet<T>& ps, const std::string& prefix, int d, BlockMode mode, const BlockSpec& spec,
                      RngState rng, double out_scale = 1.0) {
    for (int l = 0; l < spec.layers; ++l)
        init_block(ps, prefix + ".layer" + std::to_string(l), d, mode, spec.attn, spec.mlp_hidden,
                   rng.child_index(static_cast<uint64_t>(l)), out_scale);
}

template <typename T>
Var block_stack(Ctx<T>& ctx, Var q_tokens, std::optional<Var> context, BlockMode mode, const std::string& prefix,
                const BlockSpec& spec, std::vector<Tensor<T>>* attn_sink = nullptr) {
    Var x = q_tokens;
    for (int l = 0; l < spec.layers; ++l)
        x = transformer_block(ctx, x, context, mode, prefix + ".layer" + std::to_string(l), spec.attn, attn_sink);
    return x;
}

// ---- Fourier positional embedding ----

// coords: [N, A] in [0,1] -> [N, A*(2B+1)] with per-axis layout
// [c, sin(2^0 pi c) .. sin(2^{B-1} pi c), cos(2^0 pi c) .. cos(2^{B-1} pi c)]
template <typename T>
Tensor<T> fourier_embed(const Tensor<T>& coords, int num_bases) {
    MOOG_REQUIRE(coords.rank() == 2, "fourier_embed expects [N, A], got " + shape_str(coords.shape));
    MOOG_REQUIRE(num_bases >= 1, "fourier_embed: need at least one basis");
    int N = coords.dim(0), A = coords.dim(1), B = num_bases;
    for (const T& c : coords.data)
        MOOG_REQUIRE(c >= T(-0.5) && c <= T(1.5),
                "fourier_embed: coordinate " + std::to_string(static_cast<double>(c)) +
                    " outside [-0.5, 1.5]; coordinates must be normalized");
    int W = A * (2 * B + 1);
    Tensor<T> out({N, W});
    constexpr double pi = 3.14159265358979323846;
    for (int n = 0; n < N; ++n) {
        T* row = out.data.data() + static_cast<int64_t>(n) * W;
        for (int a = 0; a < A; ++a) {
            double c = static_cast<double>(coords[static_cast<int64_t>(n) * A + a]);
            T* blk = row + a * (2 * B + 1);
            blk[0] = static_cast<T>(c);
            double freq = pi;
            for (int k = 0; k < B; ++k) {
                blk[1 + k] = static_cast<T>(std::sin(freq * c));
                blk[1 + B + k] = static_cast<T>(std::cos(freq * c));
                freq *= 2.0;
            }
        }
    }
    return out;
}

}  // namespace moog
