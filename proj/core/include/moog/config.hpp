#pragma once

#include <string>
#include <vector>

#include "moog/baselines.hpp"
#include "moog/optim.hpp"
#include "moog/readouts.hpp"
#include "moog/synth.hpp"

namespace moog {

// One flat key space drives every subcommand. Files are JSON objects with
// dotted keys ("opt.peak_lr": 2e-4); --set key=value overrides take the same
// names. Unknown keys are errors.
struct RunConfig {
    std::string profile = "desk";  // desk | paper
    std::string variant = "moog";  // moog | grid | grid-recurrent
    std::vector<std::string> readouts{"rgb"};
    bool frozen_backbone = false;
    uint64_t seed = 1;
    int steps = 1000;
    int batch_size = 8;
    int unroll_len = 8;
    int decode_stride = 0;  // 0: profile default (desk 4, paper 8)
    int model_tokens = 0;   // 0: profile default

    OptConfig opt;

    std::string data_path;
    std::string eval_path;
    std::string init_checkpoint;
    std::string init_mode = "weights";  // weights: load matching tensors, start fresh
                                        // resume: restore optimizer + step, bit-exact
    std::string eval_checkpoint;
    std::string out_dir = "out";

    int checkpoint_every = 0;  // 0: only the final checkpoint
    int eval_every = 0;        // 0: no mid-run eval
    int eval_samples = 8;
    int log_every = 50;
    int threads = 0;  // 0: hardware concurrency
    bool aug_random_crop = false;

    SceneConfig scene;
    int gen_samples = 200;

    int rollout_frames = 36;
    int rollout_tokens = 0;  // 0: keep the training token count
    int rollout_sample = 0;

    std::string pca_components = "0,1,2";
    int pca_sequences = 8;
    int pca_frames = 8;

    bool has_readout(const std::string& name) const {
        for (const auto& r : readouts)
            if (r == name) return true;
        return false;
    }

    Variant variant_enum() const { return variant_from_name(variant); }

    ModelConfig model() const;
    ReadoutCfg readout_cfg() const;
    BaselineConfig baseline() const;

    void validate() const;
    std::string to_json() const;

    // file may be empty (defaults only); overrides are "key=value" strings
    static RunConfig load(const std::string& config_path, const std::vector<std::string>& overrides);
    static RunConfig from_json(const std::string& json_text);
};

}  // namespace moog
