#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "moog/analysis.hpp"

using namespace moog;

namespace {

// random row-stochastic attention stack: layers x [heads, N, K]
std::vector<TensorF> random_attn(RngState& rng, int layers, int heads, int N, int K) {
    std::vector<TensorF> out;
    for (int l = 0; l < layers; ++l) {
        TensorF a({heads, N, K});
        for (int h = 0; h < heads; ++h)
            for (int n = 0; n < N; ++n) {
                double sum = 0;
                std::vector<double> row(static_cast<size_t>(K));
                for (int k = 0; k < K; ++k) {
                    row[static_cast<size_t>(k)] = -std::log(1.0 - rng.next_uniform());
                    sum += row[static_cast<size_t>(k)];
                }
                for (int k = 0; k < K; ++k)
                    a[(static_cast<int64_t>(h) * N + n) * K + k] = static_cast<float>(row[static_cast<size_t>(k)] / sum);
            }
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace

TEST_CASE("token_attention: K=1 collapses to all ones") {
    auto rng = RngState::from_seed(1);
    auto layers = random_attn(rng, 3, 2, 12, 1);
    auto att = token_attention(layers, 3, 4);
    for (auto v : att.map.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("token_attention: averaged slices stay convex and permute with tokens") {
    auto rng = RngState::from_seed(2);
    auto layers = random_attn(rng, 4, 3, 16, 5);
    auto att = token_attention(layers, 4, 4);
    CHECK(att.layers_averaged == 4);
    CHECK(att.heads_averaged == 3);
    for (int64_t n = 0; n < 16; ++n) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += att.map[n * 5 + k];
        CHECK(std::abs(s - 1.0) < 1e-5);
    }

    // permute the K axis in every layer; the map permutes identically
    std::vector<int> perm{3, 0, 4, 2, 1};
    auto permuted = layers;
    for (auto& layer : permuted) {
        TensorF orig = layer;
        for (int h = 0; h < 3; ++h)
            for (int n = 0; n < 16; ++n)
                for (int k = 0; k < 5; ++k)
                    layer[(static_cast<int64_t>(h) * 16 + n) * 5 + k] =
                        orig[(static_cast<int64_t>(h) * 16 + n) * 5 + perm[static_cast<size_t>(k)]];
    }
    auto att2 = token_attention(permuted, 4, 4);
    for (int64_t n = 0; n < 16; ++n)
        for (int k = 0; k < 5; ++k)
            CHECK(att2.map[n * 5 + k] == doctest::Approx(att.map[n * 5 + perm[static_cast<size_t>(k)]]));
}

TEST_CASE("token_attention: rejects a non-grid decode") {
    auto rng = RngState::from_seed(3);
    auto layers = random_attn(rng, 1, 1, 10, 4);
    CHECK_THROWS_WITH_AS(token_attention(layers, 4, 4), doctest::Contains("grid"), std::runtime_error);
}

TEST_CASE("argmax_token_map: single token, tie-break, palette determinism") {
    AttentionMap att;
    att.map = TensorF::full({2, 2, 1}, 1.0f);
    auto img = argmax_token_map(att, 7);
    for (int64_t p = 0; p < 4; ++p)
        for (int c = 0; c < 3; ++c) CHECK(img[p * 3 + c] == img[c]);

    // uniform weights: every pixel picks token 0
    AttentionMap uni;
    uni.map = TensorF::full({2, 3, 4}, 0.25f);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) CHECK(argmax_token(uni, y, x) == 0);

    auto a = argmax_token_map(uni, 99);
    auto b = argmax_token_map(uni, 99);
    CHECK(a.data == b.data);
    // argmax maps ignore any monotone rescale of a pixel's weight vector
    AttentionMap scaled = uni;
    for (auto& v : scaled.map.data) v = 0.5f + 2.0f * v;
    auto c = argmax_token_map(scaled, 99);
    CHECK(c.data == a.data);
}

TEST_CASE("fit_pca: rank-1 data aligns the first component") {
    auto rng = RngState::from_seed(4);
    const int D = 6, M = 40;
    std::vector<double> dir(D);
    double norm = 0;
    for (auto& v : dir) {
        v = rng.next_gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    TensorF tokens({M, D});
    for (int i = 0; i < M; ++i) {
        double a = rng.next_gaussian() * 3.0;
        for (int d = 0; d < D; ++d) tokens[static_cast<int64_t>(i) * D + d] = static_cast<float>(1.0 + a * dir[static_cast<size_t>(d)]);
    }
    auto model = fit_pca(tokens, 3);
    double cos = 0;
    for (int d = 0; d < D; ++d) cos += model.components[d] * dir[static_cast<size_t>(d)];
    CHECK(std::abs(cos) > 1.0 - 1e-6);
    CHECK(model.variance_share[0] > 0.999);
    CHECK(model.variance_share[1] < 1e-6);
}

TEST_CASE("fit_pca: components orthonormal, shares non-increasing, reconstruction exact on low rank") {
    auto rng = RngState::from_seed(5);
    const int D = 8, M = 60, R = 3;
    // data spanning an R-dimensional affine subspace
    TensorF basis({R, D});
    for (auto& v : basis.data) v = static_cast<float>(rng.next_gaussian());
    TensorF tokens({M, D});
    for (int i = 0; i < M; ++i)
        for (int d = 0; d < D; ++d) {
            double acc = 0.3;
            for (int r = 0; r < R; ++r) acc += rng.next_gaussian() * 0.0;  // coefficients drawn below
            tokens[static_cast<int64_t>(i) * D + d] = static_cast<float>(acc);
        }
    // rebuild deterministically: tokens = mean + sum_r c_ir * basis_r
    auto coef = RngState::from_seed(6);
    for (int i = 0; i < M; ++i) {
        double c[R];
        for (double& v : c) v = coef.next_gaussian();
        for (int d = 0; d < D; ++d) {
            double acc = 0.3;
            for (int r = 0; r < R; ++r) acc += c[r] * basis[static_cast<int64_t>(r) * D + d];
            tokens[static_cast<int64_t>(i) * D + d] = static_cast<float>(acc);
        }
    }
    auto model = fit_pca(tokens, 4);
    // orthonormal rows
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            double dot = 0;
            for (int d = 0; d < D; ++d)
                dot += static_cast<double>(model.components[static_cast<int64_t>(a) * D + d]) *
                       model.components[static_cast<int64_t>(b) * D + d];
            CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-5));
        }
    for (int c = 1; c < 4; ++c) CHECK(model.variance_share[c] <= model.variance_share[c - 1] + 1e-9);

    auto proj = pca_project(model, tokens);
    auto rec = pca_reconstruct(model, proj);
    for (int64_t i = 0; i < tokens.size(); ++i) CHECK(std::abs(rec[i] - tokens[i]) < 1e-4);

    CHECK_THROWS_AS(fit_pca(TensorF({3, 8}), 4), std::runtime_error);  // M <= n
}

TEST_CASE("pca_component_image: scalar oracle and range handling") {
    auto rng = RngState::from_seed(7);
    auto layers = random_attn(rng, 2, 1, 6, 3);
    auto att = token_attention(layers, 2, 3);
    TensorF projs({3, 4});
    for (auto& v : projs.data) v = static_cast<float>(rng.next_gaussian());
    int comps[3] = {0, 2, 3};
    auto range = projection_range(projs, comps);
    auto img = pca_component_image(att, projs, comps, range);
    for (auto v : img.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) {
            int k = argmax_token(att, y, x);
            for (int j = 0; j < 3; ++j) {
                double span = range.hi[j] - range.lo[j];
                double expect = (projs[static_cast<int64_t>(k) * 4 + comps[j]] - range.lo[j]) / span;
                CHECK(img[(static_cast<int64_t>(y) * 3 + x) * 3 + j] == doctest::Approx(expect).epsilon(1e-6));
            }
        }

    // constant projections give a constant mid-gray image
    TensorF flat = TensorF::full({3, 4}, 1.5f);
    auto frange = projection_range(flat, comps);
    auto fimg = pca_component_image(att, flat, comps, frange);
    for (auto v : fimg.data) CHECK(v == 0.5f);

    int bad[3] = {0, 1, 64};
    CHECK_THROWS_AS(projection_range(projs, bad), std::runtime_error);
}

TEST_CASE("write_image: 1x1 white pixel produces the exact P6 bytes") {
    auto dir = std::filesystem::temp_directory_path();
    std::string path = (dir / "moog_white.ppm").string();
    write_image(TensorF::full({1, 1, 3}, 1.0f), path);
    std::ifstream in(path, std::ios::binary);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(contents == std::string("P6\n1 1\n255\n\xff\xff\xff", 14));
    std::filesystem::remove(path);
}

TEST_CASE("write_image: round-trip equals the quantized input") {
    auto rng = RngState::from_seed(8);
    TensorF img({5, 7, 3});
    for (auto& v : img.data) v = static_cast<float>(rng.next_uniform());
    auto dir = std::filesystem::temp_directory_path();
    std::string path = (dir / "moog_rt.ppm").string();
    write_image(img, path);
    auto back = read_image(path);
    REQUIRE(back.shape == img.shape);
    for (int64_t i = 0; i < img.size(); ++i) {
        float quantized = static_cast<float>(std::lround(img[i] * 255.0f)) / 255.0f;
        CHECK(back[i] == doctest::Approx(quantized).epsilon(1e-6));
    }
    std::filesystem::remove(path);
}

TEST_CASE("write_sequence: one numbered file per frame") {
    auto dir = std::filesystem::temp_directory_path() / "moog_seq_test";
    std::filesystem::remove_all(dir);
    std::vector<TensorF> frames(3, TensorF::full({2, 2, 3}, 0.25f));
    write_sequence(frames, dir.string());
    CHECK(std::filesystem::exists(dir / "frame_0000.ppm"));
    CHECK(std::filesystem::exists(dir / "frame_0002.ppm"));
    int count = 0;
    for ([[maybe_unused]] auto& e : std::filesystem::directory_iterator(dir)) ++count;
    CHECK(count == 3);
    std::filesystem::remove_all(dir);
}
