#include "moog/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "moog/serial.hpp"

namespace moog {

AttentionMap token_attention(const std::vector<TensorF>& attn_layers, int height, int width) {
    require(!attn_layers.empty(), "token_attention: no attention tensors");
    int N = attn_layers[0].dim(1);
    int K = attn_layers[0].dim(2);
    require(N == height * width,
            "token_attention: decode covered " + std::to_string(N) + " queries, not a full " +
                std::to_string(height) + "x" + std::to_string(width) + " grid");
    AttentionMap out;
    out.map = TensorF({height, width, K});
    out.layers_averaged = static_cast<int>(attn_layers.size());
    out.heads_averaged = attn_layers[0].dim(0);
    double denom = 0;
    for (const TensorF& layer : attn_layers) {
        require(layer.rank() == 3 && layer.dim(1) == N && layer.dim(2) == K,
                "token_attention: inconsistent attention shapes");
        denom += layer.dim(0);
    }
    for (const TensorF& layer : attn_layers) {
        int heads = layer.dim(0);
        for (int h = 0; h < heads; ++h)
            for (int64_t n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k)
                    out.map[n * K + k] += static_cast<float>(layer[(static_cast<int64_t>(h) * N + n) * K + k] / denom);
    }
    return out;
}

int argmax_token(const AttentionMap& att, int y, int x) {
    int K = att.tokens();
    const float* row = att.map.data.data() + (static_cast<int64_t>(y) * att.width() + x) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
        if (row[k] > row[best]) best = k;  // ties keep the lowest index
    return best;
}

TensorF argmax_token_map(const AttentionMap& att, uint64_t palette_seed) {
    int H = att.height(), W = att.width(), K = att.tokens();
    // one stable color per token index
    std::vector<float> palette(static_cast<size_t>(K) * 3);
    RngState rng = RngState::from_seed(palette_seed);
    for (int k = 0; k < K; ++k) {
        RngState c = rng.child_index(static_cast<uint64_t>(k));
        for (int j = 0; j < 3; ++j) palette[static_cast<size_t>(k) * 3 + j] = static_cast<float>(c.uniform_in(0.1, 1.0));
    }
    TensorF img({H, W, 3});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int k = argmax_token(att, y, x);
            for (int j = 0; j < 3; ++j)
                img[(static_cast<int64_t>(y) * W + x) * 3 + j] = palette[static_cast<size_t>(k) * 3 + j];
        }
    return img;
}

PcaModel fit_pca(const TensorF& tokens, int n) {
    require(tokens.rank() == 2, "fit_pca: tokens must be [M, D]");
    int M = tokens.dim(0), D = tokens.dim(1);
    require(M > n, "fit_pca: need more samples than components (" + std::to_string(M) + " <= " + std::to_string(n) + ")");
    require(n >= 1 && n <= D, "fit_pca: component count out of range");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(D);
    for (int i = 0; i < M; ++i)
        for (int d = 0; d < D; ++d) mean[d] += tokens[static_cast<int64_t>(i) * D + d];
    mean /= M;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
    Eigen::VectorXd row(D);
    for (int i = 0; i < M; ++i) {
        for (int d = 0; d < D; ++d) row[d] = tokens[static_cast<int64_t>(i) * D + d] - mean[d];
        cov.noalias() += row * row.transpose();
    }
    cov /= M;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    require(eig.info() == Eigen::Success, "fit_pca: eigendecomposition failed");
    // eigenvalues come back ascending
    double total = std::max(eig.eigenvalues().sum(), 1e-300);

    PcaModel model;
    model.mean = TensorF({D});
    for (int d = 0; d < D; ++d) model.mean[d] = static_cast<float>(mean[d]);
    model.components = TensorF({n, D});
    model.variance_share = TensorF({n});
    for (int c = 0; c < n; ++c) {
        int src = D - 1 - c;
        for (int d = 0; d < D; ++d) model.components[static_cast<int64_t>(c) * D + d] = static_cast<float>(eig.eigenvectors()(d, src));
        model.variance_share[c] = static_cast<float>(std::max(0.0, eig.eigenvalues()[src]) / total);
    }
    return model;
}

TensorF pca_project(const PcaModel& model, const TensorF& tokens) {
    int D = model.mean.dim(0);
    int n = model.components.dim(0);
    require(tokens.last_dim() == D, "pca_project: token dim mismatch");
    int64_t rows = tokens.rows_flat();
    std::vector<int> oshape(tokens.shape.begin(), tokens.shape.end() - 1);
    oshape.push_back(n);
    TensorF out(oshape);
    for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) {
            double acc = 0;
            for (int d = 0; d < D; ++d)
                acc += (tokens[r * D + d] - model.mean[d]) *
                       static_cast<double>(model.components[static_cast<int64_t>(c) * D + d]);
            out[r * n + c] = static_cast<float>(acc);
        }
    return out;
}

TensorF pca_reconstruct(const PcaModel& model, const TensorF& projected) {
    int D = model.mean.dim(0);
    int n = model.components.dim(0);
    require(projected.last_dim() == n, "pca_reconstruct: projection dim mismatch");
    int64_t rows = projected.rows_flat();
    std::vector<int> oshape(projected.shape.begin(), projected.shape.end() - 1);
    oshape.push_back(D);
    TensorF out(oshape);
    for (int64_t r = 0; r < rows; ++r)
        for (int d = 0; d < D; ++d) {
            double acc = model.mean[d];
            for (int c = 0; c < n; ++c)
                acc += static_cast<double>(projected[r * n + c]) * model.components[static_cast<int64_t>(c) * D + d];
            out[r * D + d] = static_cast<float>(acc);
        }
    return out;
}

ComponentRange projection_range(const TensorF& projections, const int components[3]) {
    int n = projections.last_dim();
    int64_t rows = projections.rows_flat();
    ComponentRange r;
    for (int j = 0; j < 3; ++j) {
        require(components[j] >= 0 && components[j] < n,
                "pca component index " + std::to_string(components[j]) + " out of range (have " + std::to_string(n) + ")");
        double lo = projections[components[j]], hi = lo;
        for (int64_t i = 0; i < rows; ++i) {
            double v = projections[i * n + components[j]];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        r.lo[j] = lo;
        r.hi[j] = hi;
    }
    return r;
}

TensorF pca_component_image(const AttentionMap& att, const TensorF& token_projections, const int components[3],
                            const ComponentRange& range) {
    int H = att.height(), W = att.width(), K = att.tokens();
    require(token_projections.rank() == 2 && token_projections.dim(0) == K,
            "pca_component_image: projections must cover every token");
    int n = token_projections.dim(1);
    for (int j = 0; j < 3; ++j)
        require(components[j] >= 0 && components[j] < n, "pca component index out of range");
    TensorF img({H, W, 3});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int k = argmax_token(att, y, x);
            for (int j = 0; j < 3; ++j) {
                double v = token_projections[static_cast<int64_t>(k) * n + components[j]];
                double span = range.hi[j] - range.lo[j];
                double u = span > 0 ? (v - range.lo[j]) / span : 0.5;
                img[(static_cast<int64_t>(y) * W + x) * 3 + j] = static_cast<float>(std::clamp(u, 0.0, 1.0));
            }
        }
    return img;
}

void write_image(const TensorF& img, const std::string& path) {
    require(img.rank() == 3 && img.dim(2) == 3, "write_image: expected [H,W,3], got " + shape_str(img.shape));
    int H = img.dim(0), W = img.dim(1);
    std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    std::vector<uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + static_cast<size_t>(H) * W * 3);
    for (int64_t i = 0; i < img.size(); ++i) {
        double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
        bytes.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
    }
    write_file_bytes(path, bytes);
}

TensorF read_image(const std::string& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    require(bytes.size() > 2 && bytes[0] == 'P' && bytes[1] == '6', "not a P6 ppm: " + path);
    size_t pos = 2;
    auto next_int = [&] {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        require(pos < bytes.size(), "truncated ppm header: " + path);
        int v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
        return v;
    };
    int W = next_int(), H = next_int(), maxval = next_int();
    require(maxval == 255, "unsupported ppm depth in " + path);
    ++pos;  // single whitespace after maxval
    require(bytes.size() - pos >= static_cast<size_t>(H) * W * 3, "truncated ppm payload: " + path);
    TensorF img({H, W, 3});
    for (int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(bytes[pos + static_cast<size_t>(i)]) / 255.0f;
    return img;
}

void write_sequence(const std::vector<TensorF>& imgs, const std::string& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    for (size_t t = 0; t < imgs.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "%s_%04zu.ppm", stem.c_str(), t);
        write_image(imgs[t], (std::filesystem::path(dir) / name).string());
    }
}

}  // namespace moog
