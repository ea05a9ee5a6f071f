#include <doctest.h>

#include <set>

#include "moog/rng.hpp"

using namespace moog;

TEST_CASE("identical seed and position replay the same sequence") {
    auto a = RngState::from_seed(42);
    auto b = RngState::from_seed(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("resuming from a saved position continues the stream") {
    auto a = RngState::from_seed(7);
    for (int i = 0; i < 10; ++i) a.next_u64();
    RngState saved = a;
    std::vector<uint64_t> rest;
    for (int i = 0; i < 5; ++i) rest.push_back(a.next_u64());
    for (int i = 0; i < 5; ++i) CHECK(saved.next_u64() == rest[static_cast<size_t>(i)]);
}

TEST_CASE("child streams differ per label and from the parent") {
    auto root = RngState::from_seed(3);
    auto a = root.child("alpha");
    auto b = root.child("beta");
    auto a2 = root.child("alpha");
    CHECK(a.next_u64() == a2.next_u64());
    std::set<uint64_t> firsts;
    for (const char* label : {"a", "b", "c", "d", "e", "f", "g", "h"})
        firsts.insert(root.child(label).next_u64());
    CHECK(firsts.size() == 8);
    CHECK(a.seed != b.seed);
}

TEST_CASE("uniform draws land in [0,1)") {
    auto r = RngState::from_seed(11);
    for (int i = 0; i < 1000; ++i) {
        double u = r.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("gaussian sample statistics") {
    auto r = RngState::from_seed(5);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double g = r.next_gaussian();
        sum += g;
        sq += g * g;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("gaussian tensor applies sigma") {
    auto r = RngState::from_seed(9);
    auto t = r.gaussian_tensor<float>({64, 64}, 1e-4);
    double sq = 0;
    for (auto v : t.data) sq += static_cast<double>(v) * v;
    double std = std::sqrt(sq / static_cast<double>(t.size()));
    CHECK(std > 0.5e-4);
    CHECK(std < 2e-4);
}
