#pragma once

#include <string>
#include <vector>

#include "moog/rng.hpp"
#include "moog/tensor.hpp"

namespace moog {

// Per-pixel token responsibilities for one frame, averaged over all decoder
// layers and heads. Every [H,W,:] slice is a convex weight vector.
struct AttentionMap {
    TensorF map;  // [H, W, K]
    int layers_averaged = 0;
    int heads_averaged = 0;

    int height() const { return map.dim(0); }
    int width() const { return map.dim(1); }
    int tokens() const { return map.dim(2); }
};

// attn_layers: per decoder layer [heads, N, K] with N == H*W decoded on a
// full row-major grid
AttentionMap token_attention(const std::vector<TensorF>& attn_layers, int height, int width);

// per-pixel argmax token index, color-coded by a seeded palette; ties go to
// the lowest index and a token keeps its color across frames
TensorF argmax_token_map(const AttentionMap& att, uint64_t palette_seed);

int argmax_token(const AttentionMap& att, int y, int x);

struct PcaModel {
    TensorF mean;            // [D]
    TensorF components;      // [n, D] orthonormal rows, leading first
    TensorF variance_share;  // [n] non-increasing, sums to <= 1
};

// center and eigendecompose the covariance of tokens [M, D]; requires M > n
PcaModel fit_pca(const TensorF& tokens, int n = 64);

// tokens [..., D] -> [..., n]
TensorF pca_project(const PcaModel& model, const TensorF& tokens);

// reconstruct centered data from projections and add the mean back
TensorF pca_reconstruct(const PcaModel& model, const TensorF& projected);

// Each pixel takes the selected 3 projection values of its argmax token,
// min-max normalized per component with the given ranges (use
// projection_range over the whole batch for cross-frame consistency).
struct ComponentRange {
    double lo[3] = {0, 0, 0};
    double hi[3] = {1, 1, 1};
};

ComponentRange projection_range(const TensorF& projections, const int components[3]);

TensorF pca_component_image(const AttentionMap& att, const TensorF& token_projections, const int components[3],
                            const ComponentRange& range);

// binary PPM (P6, 8-bit); values expected in [0,1]
void write_image(const TensorF& img, const std::string& path);
TensorF read_image(const std::string& path);
void write_sequence(const std::vector<TensorF>& imgs, const std::string& dir, const std::string& stem = "frame");

}  // namespace moog
