#pragma once

#include "moog/model.hpp"

namespace moog {

enum class Variant { moog, grid, grid_recurrent };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::moog: return "moog";
        case Variant::grid: return "grid";
        case Variant::grid_recurrent: return "grid-recurrent";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "moog") return Variant::moog;
    if (s == "grid") return Variant::grid;
    if (s == "grid-recurrent") return Variant::grid_recurrent;
    fail("unknown model variant: " + s + " (expected moog | grid | grid-recurrent)");
}

// On-the-grid comparison models. Both share MooG's encoder, decoder and
// readouts; the encoder gains a self-attention transformer to make up for the
// missing predictor/corrector capacity. Token count is tied to the feature
// grid: H'*W' tokens of dim D.
struct BaselineConfig {
    Variant variant = Variant::grid;
    ModelConfig base;
    BlockCfg encoder_sa{3, 8, 64, 2048};

    int grid_tokens() const { return base.feat_h() * base.feat_w(); }

    static BaselineConfig desk(Variant v) {
        BaselineConfig c;
        c.variant = v;
        c.base = ModelConfig::desk();
        c.encoder_sa = {3, 4, 16, 256};
        return c;
    }
    static BaselineConfig tiny(Variant v) {
        BaselineConfig c;
        c.variant = v;
        c.base = ModelConfig::tiny();
        c.encoder_sa = {1, 1, 8, 8};
        return c;
    }
};

template <typename T>
void baseline_init_params(ParamSet<T>& ps, const BaselineConfig& cfg, RngState rng, double residual_scale = 0.0) {
    moog_init_params(ps, cfg.base, rng, residual_scale);  // encoder/decoder shared; corrector reused by grid-rec
    init_block_stack(ps, "encsa", cfg.base.dim, BlockMode::self_only, cfg.encoder_sa.spec(), rng.child("encsa"),
                     residual_scale);
    if (cfg.variant == Variant::grid_recurrent)
        init_linear(ps, "gridrec.state_pos", 2 * (2 * cfg.base.encoder_bases + 1), cfg.base.dim,
                    rng.child("gridrec.state_pos"));
}

// frame -> CNN+positional features -> self-attention stack; the result both
// feeds the pixel decoder and serves as the on-the-grid representation
template <typename T>
Var grid_encode(Ctx<T>& ctx, const BaselineConfig& cfg, const Tensor<T>& frame) {
    Var f = encode_frame(ctx, cfg.base, frame);
    return block_stack(ctx, f, std::nullopt, BlockMode::self_only, "encsa", cfg.encoder_sa.spec());
}

// Recurrence for the grid-rec variant: the current encoding queries the
// previous corrected tokens. Token index means grid cell here, so the state
// is re-keyed with the grid positional embedding before it is attended into;
// scrambling the state rows genuinely scrambles position/content binding.
template <typename T>
Var grid_rec_step(Ctx<T>& ctx, const BaselineConfig& cfg, Var prev_corrected, Var enc_tokens) {
    auto& tape = ctx.tape;
    MOOG_REQUIRE(tape.val(prev_corrected).dim(0) == cfg.grid_tokens(),
            "grid_rec_step: previous state must hold " + std::to_string(cfg.grid_tokens()) + " tokens");
    Var pos = linear(ctx, tape.constant(fourier_embed(full_grid_coords<T>(cfg.base.feat_h(), cfg.base.feat_w()),
                                                      cfg.base.encoder_bases)),
                     "gridrec.state_pos");
    Var kv = tape.add(prev_corrected, pos);
    Var x = block_stack(ctx, enc_tokens, kv, BlockMode::parallel_cross_self, "corrector",
                        cfg.base.corrector.spec());
    return layer_norm(ctx, x, "corrector.out_norm");
}

}  // namespace moog
