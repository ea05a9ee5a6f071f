#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moog {

inline int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// require() builds its message eagerly; hot paths use this instead so the
// formatting only happens on failure
#define MOOG_REQUIRE(cond, ...)                 \
    do {                                        \
        if (!(cond)) ::moog::fail(__VA_ARGS__); \
    } while (0)

namespace detail {

// std::vector that default-initializes on resize; lets kernels that overwrite
// every element skip the zero-fill
template <typename T, typename A = std::allocator<T>>
class default_init_allocator : public A {
    using traits = std::allocator_traits<A>;

public:
    template <typename U>
    struct rebind {
        using other = default_init_allocator<U, typename traits::template rebind_alloc<U>>;
    };
    using A::A;

    template <typename U>
    void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(ptr)) U;
    }
    template <typename U, typename... Args>
    void construct(U* ptr, Args&&... args) {
        traits::construct(static_cast<A&>(*this), ptr, std::forward<Args>(args)...);
    }
};

}  // namespace detail

// Dense row-major n-d array. Carrier for frames, features, latent tokens,
// parameters and gradients. f32 in training, f64 in gradient-check mode.
template <typename T>
struct Tensor {
    using Buffer = std::vector<T, detail::default_init_allocator<T>>;

    std::vector<int> shape;
    Buffer data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        for (int d : shape) require(d > 0, "tensor dims must be positive, got " + shape_str(shape));
        data.assign(static_cast<size_t>(numel(shape)), T(0));
    }
    Tensor(std::vector<int> s, Buffer d) : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<int64_t>(data.size()) == numel(shape),
                "tensor data/shape mismatch: " + std::to_string(data.size()) + " values vs " + shape_str(shape));
    }

    // storage sized but not zeroed; caller promises to write every element
    static Tensor uninit(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        for (int d : t.shape) require(d > 0, "tensor dims must be positive, got " + shape_str(t.shape));
        t.data.resize(static_cast<size_t>(numel(t.shape)));
        return t;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t = uninit(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data.size()); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // last-axis length; reductions and norms work per row of [rows, cols]
    int last_dim() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows_flat() const { return shape.empty() ? 1 : size() / last_dim(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace moog
