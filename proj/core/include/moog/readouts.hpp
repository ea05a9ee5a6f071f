#pragma once

#include <string>
#include <vector>

#include "moog/model.hpp"

namespace moog {

// Shared backbone for every task head: a cross-attention-only transformer
// reading the latent tokens, plus per-task query/track machinery.
struct ReadoutCfg {
    BlockCfg backbone{3, 8, 64, 2048};
    int track_dim = 512;  // D_y
    int query_bases = 16;

    static ReadoutCfg paper() { return ReadoutCfg{}; }
    static ReadoutCfg desk() { return ReadoutCfg{{3, 4, 16, 256}, 64, 16}; }
    static ReadoutCfg tiny() { return ReadoutCfg{{1, 1, 8, 8}, 8, 3}; }
};

// ---- dense grid readout (depth and friends) ----

template <typename T>
void grid_readout_init(ParamSet<T>& ps, const ReadoutCfg& cfg, const std::string& prefix, int model_dim,
                       int out_channels, RngState rng, double residual_scale = 0.0) {
    init_linear(ps, prefix + ".query_proj", 2 * (2 * cfg.query_bases + 1), model_dim, rng.child("query_proj"));
    init_block_stack(ps, prefix + ".backbone", model_dim, BlockMode::cross_only, cfg.backbone.spec(),
                     rng.child("backbone"), residual_scale);
    init_layer_norm(ps, prefix + ".out_norm", model_dim);
    init_linear(ps, prefix + ".head", model_dim, out_channels, rng.child("head"));
}

// coordinate queries over [z_c, z_p]; per-coordinate values, no squashing
template <typename T>
Var grid_readout(Ctx<T>& ctx, const ReadoutCfg& cfg, const std::string& prefix, Var states,
                 const Tensor<T>& coords) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(coords.rank() == 2 && coords.dim(1) == 2, "grid_readout: coords must be [N,2]");
    Var q = linear(ctx, tape.constant(fourier_embed(coords, cfg.query_bases)), prefix + ".query_proj");
    q = block_stack(ctx, q, states, BlockMode::cross_only, prefix + ".backbone", cfg.backbone.spec());
    return linear(ctx, layer_norm(ctx, q, prefix + ".out_norm"), prefix + ".head");
}

// ---- recurrent query-based readout (points, boxes) ----

template <typename T>
void track_readout_init(ParamSet<T>& ps, const ReadoutCfg& cfg, const std::string& prefix, int model_dim,
                        int query_dims, RngState rng, double residual_scale = 0.0) {
    int embed = query_dims * (2 * cfg.query_bases + 1);
    init_linear(ps, prefix + ".init.fc1", embed, cfg.track_dim, rng.child("init1"));
    init_linear(ps, prefix + ".init.fc2", cfg.track_dim, cfg.track_dim, rng.child("init2"));
    // corrector: cross-only attention into the states; queries are track latents
    init_block_stack(ps, prefix + ".corr", cfg.track_dim, BlockMode::cross_only, cfg.backbone.spec(),
                     rng.child("corr"), residual_scale);
    init_layer_norm(ps, prefix + ".corr_norm", cfg.track_dim);
    // per-latent predictor MLP hands the latent to the next frame
    init_linear(ps, prefix + ".pred.fc1", cfg.track_dim, cfg.track_dim, rng.child("pred1"));
    init_linear(ps, prefix + ".pred.fc2", cfg.track_dim, cfg.track_dim, rng.child("pred2"));
}

// NOTE: track latents never see each other; the corrector is cross-only and
// every head is per-latent, so deleting track j cannot change track i.
template <typename T>
Var init_track_latents(Ctx<T>& ctx, const ReadoutCfg& cfg, const std::string& prefix, const Tensor<T>& queries) {
    MOOG_REQUIRE(queries.rank() == 2 && queries.dim(0) >= 1, "init_track_latents: queries must be [N,A]");
    Var e = ctx.tape.constant(fourier_embed(queries, cfg.query_bases));
    return linear(ctx, ctx.tape.gelu(linear(ctx, e, prefix + ".init.fc1")), prefix + ".init.fc2");
}

template <typename T>
struct TrackStep {
    Var corrected;  // y after reading the current states; feed the heads this
    Var next;       // y handed to the next frame
};

template <typename T>
TrackStep<T> track_step(Ctx<T>& ctx, const ReadoutCfg& cfg, const std::string& prefix, Var y, Var states) {
    auto& tape = ctx.tape;
    Var c = block_stack(ctx, y, states, BlockMode::cross_only, prefix + ".corr", cfg.backbone.spec());
    c = layer_norm(ctx, c, prefix + ".corr_norm");
    Var delta = linear(ctx, tape.gelu(linear(ctx, c, prefix + ".pred.fc1")), prefix + ".pred.fc2");
    return {c, tape.add(c, delta)};
}

// ---- heads ----

template <typename T>
void point_head_init(ParamSet<T>& ps, const ReadoutCfg& cfg, const std::string& prefix, RngState rng) {
    init_linear(ps, prefix + ".coord", cfg.track_dim, 2, rng.child("coord"));
    init_linear(ps, prefix + ".vis", cfg.track_dim, 1, rng.child("vis"));
    init_linear(ps, prefix + ".cert", cfg.track_dim, 1, rng.child("cert"));
}

template <typename T>
struct PointHeadOut {
    Var coords;  // [N,2] in (0,1)
    Var vis;     // [N,1] logits
    Var cert;    // [N,1] logits
};

template <typename T>
PointHeadOut<T> point_head(Ctx<T>& ctx, const std::string& prefix, Var y_corrected) {
    return {ctx.tape.sigmoid(linear(ctx, y_corrected, prefix + ".coord")),
            linear(ctx, y_corrected, prefix + ".vis"), linear(ctx, y_corrected, prefix + ".cert")};
}

template <typename T>
void box_head_init(ParamSet<T>& ps, const ReadoutCfg& cfg, const std::string& prefix, RngState rng) {
    init_linear(ps, prefix + ".box", cfg.track_dim, 4, rng.child("box"));
}

// (y_min, x_min, y_max, x_max), sigmoid-squashed to [0,1]
template <typename T>
Var box_head(Ctx<T>& ctx, const std::string& prefix, Var y_corrected) {
    return ctx.tape.sigmoid(linear(ctx, y_corrected, prefix + ".box"));
}

// ---- losses ----

// Per-frame point supervision. Position: Huber on the Euclidean error over
// gt-visible in-scene points, amplified by 1000. Visibility: BCE everywhere.
// Certainty: BCE on in-scene points against a stop-gradient target that marks
// predictions within the certainty radius (8 px at 256-scale). Points that
// left the scene contribute only the visibility term.
struct PointLossCfg {
    double huber_delta = 1.0;
    double huber_weight = 1000.0;
    double cert_radius = 8.0 / 256.0;
};

template <typename T>
struct PointFrameTarget {
    Tensor<T> coords;             // [N,2] normalized gt positions
    std::vector<uint8_t> visible;  // [N]
    std::vector<uint8_t> in_scene; // [N]
};

template <typename T>
Var point_loss_frame(Ctx<T>& ctx, const PointHeadOut<T>& pred, const PointFrameTarget<T>& gt,
                     const PointLossCfg& cfg = {}) {
    auto& tape = ctx.tape;
    int N = gt.coords.dim(0);
    MOOG_REQUIRE(tape.val(pred.coords).dim(0) == N, "point_loss: prediction/target count mismatch");

    Var diff = tape.sub(pred.coords, tape.constant(gt.coords));
    Var sqdist = tape.sum_last(tape.mul(diff, diff));  // [N]

    Tensor<T> pos_mask({N});
    Tensor<T> cert_mask({N});
    int64_t pos_count = 0, cert_count = 0;
    for (int n = 0; n < N; ++n) {
        bool in = gt.in_scene[static_cast<size_t>(n)];
        bool vis = gt.visible[static_cast<size_t>(n)];
        pos_mask[n] = (in && vis) ? T(1) : T(0);
        cert_mask[n] = in ? T(1) : T(0);
        pos_count += (in && vis) ? 1 : 0;
        cert_count += in ? 1 : 0;
    }

    Var loss;
    bool has_loss = false;
    if (pos_count > 0) {
        Var huber = tape.huber_from_sqdist(sqdist, static_cast<T>(cfg.huber_delta));
        for (auto& v : pos_mask.data) v *= static_cast<T>(cfg.huber_weight / static_cast<double>(pos_count));
        loss = tape.weighted_sum(huber, pos_mask);
        has_loss = true;
    }

    // visibility BCE over every point, occluded and off-scene alike
    Tensor<T> vis_target({N, 1});
    for (int n = 0; n < N; ++n)
        vis_target[n] = (gt.in_scene[static_cast<size_t>(n)] && gt.visible[static_cast<size_t>(n)]) ? T(1) : T(0);
    Var vis_bce = tape.mean_all(tape.bce_logits(pred.vis, vis_target));
    loss = has_loss ? tape.add(loss, vis_bce) : vis_bce;

    if (cert_count > 0) {
        // certainty target from the current prediction values, no gradient flow
        const Tensor<T>& pc = tape.val(pred.coords);
        Tensor<T> cert_target({N, 1});
        double r2 = cfg.cert_radius * cfg.cert_radius;
        for (int n = 0; n < N; ++n) {
            double dx = static_cast<double>(pc[n * 2]) - gt.coords[n * 2];
            double dy = static_cast<double>(pc[n * 2 + 1]) - gt.coords[n * 2 + 1];
            cert_target[n] = (dx * dx + dy * dy <= r2) ? T(1) : T(0);
        }
        Tensor<T> w({N, 1});
        for (int n = 0; n < N; ++n) w[n] = cert_mask[n] / static_cast<T>(cert_count);
        loss = tape.add(loss, tape.weighted_sum(tape.bce_logits(pred.cert, cert_target), w));
    }
    return loss;
}

// masked mean squared error; an all-masked frame contributes exactly zero
template <typename T>
Var depth_loss(Ctx<T>& ctx, Var pred, const Tensor<T>& gt, const std::vector<uint8_t>& mask) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(tape.val(pred).same_shape(gt), "depth_loss: shape mismatch " + shape_str(tape.val(pred).shape) +
                                               " vs " + shape_str(gt.shape));
    MOOG_REQUIRE(static_cast<int64_t>(mask.size()) == gt.size(), "depth_loss: mask size mismatch");
    int64_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) return tape.constant(Tensor<T>::scalar(T(0)));
    Var diff = tape.sub(pred, tape.constant(gt));
    Tensor<T> w(gt.shape);
    for (int64_t i = 0; i < gt.size(); ++i) w[i] = mask[static_cast<size_t>(i)] ? T(1) / static_cast<T>(count) : T(0);
    return tape.weighted_sum(tape.mul(diff, diff), w);
}

// L2 against normalized corner coordinates, over present boxes only
template <typename T>
Var box_loss(Ctx<T>& ctx, Var pred, const Tensor<T>& gt, const std::vector<uint8_t>& present) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(tape.val(pred).same_shape(gt), "box_loss: shape mismatch");
    int N = gt.dim(0);
    MOOG_REQUIRE(static_cast<int>(present.size()) == N, "box_loss: presence size mismatch");
    int64_t count = 0;
    for (auto p : present) count += p ? 1 : 0;
    if (count == 0) return tape.constant(Tensor<T>::scalar(T(0)));
    Var diff = tape.sub(pred, tape.constant(gt));
    Tensor<T> w(gt.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < 4; ++c)
            w[static_cast<int64_t>(n) * 4 + c] = present[static_cast<size_t>(n)] ? T(1) / static_cast<T>(count * 4) : T(0);
    return tape.weighted_sum(tape.mul(diff, diff), w);
}

}  // namespace moog
