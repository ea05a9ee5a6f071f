#pragma once

#include <string>

#include "moog/params.hpp"

namespace moog {

// Versioned named-tensor container. Model parameters keep their plain names;
// optimizer moments live under "opt.m."/"opt.v.", a fitted PCA model under
// "pca.". The config blob carries the flat RunConfig echo plus RNG seeds, so
// a resumed run replays the interrupted one bit-exactly.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    uint64_t step = 0;
    std::string config_blob;  // JSON
    ParamSetF tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace moog
