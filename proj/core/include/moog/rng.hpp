#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "moog/tensor.hpp"

namespace moog {

namespace detail {
// splitmix64 finalizer; full-period bijective mix
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_label(std::string_view label) {
    // FNV-1a 64
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}
}  // namespace detail

// Counter-based stream: a draw is a pure function of (seed, counter), so
// identical seed+position always replays the same sequence. Child streams
// fold a label hash into the seed; distinct labels give distinct streams.
struct RngState {
    uint64_t seed = 0;
    uint64_t counter = 0;

    static RngState from_seed(uint64_t s) { return RngState{detail::mix64(s), 0}; }

    RngState child(std::string_view label) const {
        return RngState{detail::mix64(seed ^ detail::hash_label(label)), 0};
    }
    RngState child_index(uint64_t i) const {
        return RngState{detail::mix64(seed ^ detail::mix64(i ^ 0xa5a5a5a5a5a5a5a5ULL)), 0};
    }

    uint64_t next_u64() { return detail::mix64(seed ^ detail::mix64(++counter)); }

    // uniform in [0, 1) with 53 random bits
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // integer in [0, n)
    uint64_t next_below(uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

    // Box-Muller; no cached spare so every value is a pure (seed,counter) function
    double next_gaussian() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
    }

    template <typename T>
    Tensor<T> gaussian_tensor(std::vector<int> shape, double sigma, double mean = 0.0) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(mean + sigma * next_gaussian());
        return t;
    }
};

}  // namespace moog
