#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "moog/checkpoint.hpp"
#include "moog/config.hpp"
#include "moog/metrics.hpp"

namespace moog {

// parameters for the configured variant plus every enabled readout head;
// frozen_backbone marks all non-readout tensors non-trainable
ParamSetF build_params(const RunConfig& cfg);

Checkpoint make_checkpoint(const RunConfig& cfg, const ParamSetF& params, const OptStateF& opt, uint64_t step);

// weights mode: copy tensors whose names match, ignore the rest.
// resume mode: every parameter and optimizer moment must be present.
void load_into(const Checkpoint& ckpt, ParamSetF& params, OptStateF* opt, bool strict);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<std::string> log_lines;  // one JSON object per logged step
    std::map<std::string, double> first_terms, final_terms;
    double steps_per_sec = 0;
};

// Full training run: sample batches, unroll, backprop, clip, update on the
// cosine schedule; periodic checkpoints and eval when configured. Requires a
// readable dataset at cfg.data_path. log_sink, when set, receives each log
// line as it is produced.
TrainResult train(const RunConfig& cfg, const std::function<void(const std::string&)>& log_sink = {});

// profile/variant of a checkpoint must match the config consuming it
void check_checkpoint_compat(const Checkpoint& ckpt, const RunConfig& cfg);

// Unrolls every eval sequence, decodes the full grid for PSNR, runs enabled
// readout heads from frame-0 queries and scores them next to the cheap
// reference predictors (copy-previous-frame, static query, median depth,
// first-frame box).
MetricReport evaluate(const RunConfig& cfg, const ParamSetF& params, const std::vector<VideoSample>& eval_set);

struct RolloutOptions {
    int t_out = 8;
    int k_override = 0;             // 0: config token count
    bool want_attention = false;
    bool decode_state_tokens = false;  // baselines: decode the recurrent state
                                       // instead of the encoder tokens
    const TensorF* initial_state = nullptr;  // moog z_c0 / grid-rec previous tokens
    uint64_t state_seed = 0;
};

struct RolloutResult {
    std::vector<TensorF> predictions;              // per frame [H,W,3]
    std::vector<std::vector<TensorF>> attention;   // per frame, per decoder layer [heads,N,K]
    std::vector<TensorF> state_primary;            // moog z_p / baseline tokens
    std::vector<TensorF> state_corrected;          // moog z_c / grid-rec corrected
    std::vector<double> psnr_db;                   // vs gt, frames 1..T-1 (frame 0 has no prediction basis)
};

RolloutResult rollout(const RunConfig& cfg, const ParamSetF& params, const VideoSample& sample,
                      const RolloutOptions& opts);

}  // namespace moog
