#pragma once

#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "moog/tensor.hpp"

namespace moog {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

// exp for the float path: 2^(x log2 e) with a degree-7 polynomial fraction,
// relative error ~1e-6. The double path keeps libm so gradient checks see a
// smooth function.
inline float fast_exp(float x) {
    x = std::max(-87.0f, std::min(88.0f, x));
    float z = x * 1.44269504088896341f;
    float n = std::floor(z);
    float f = z - n;
    float p = 1.0f +
              f * (0.693147180559945f +
                   f * (0.240226506959101f +
                        f * (0.055504108664822f +
                             f * (0.009618129107629f +
                                  f * (0.001333355814643f +
                                       f * (0.000154035303934f + f * 0.000015252733194f))))));
    uint32_t bits = static_cast<uint32_t>(static_cast<int32_t>(n) + 127) << 23;
    float scale;
    std::memcpy(&scale, &bits, 4);
    return p * scale;
}

inline double fast_exp(double x) { return std::exp(x); }

template <typename T>
T fast_sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + fast_exp(-x)) : [&] {
        T e = fast_exp(x);
        return e / (T(1) + e);
    }();
}

inline float fast_tanh(float x) { return 2.0f * fast_sigmoid(2.0f * x) - 1.0f; }
inline double fast_tanh(double x) { return std::tanh(x); }

// Deterministic matmul kernels. Each output element accumulates strictly in
// ascending k order, independent of how many other rows are computed, so a
// single query decoded alone is bit-identical to the same row of a batch.

// C[i,j] = sum_k A[i,k] B[k,j]. Rows are processed four at a time to reuse
// each B row; every output element still accumulates in ascending k order, so
// results do not depend on which other rows are present.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int M, int K, int N) {
    int i = 0;
    for (; i + 4 <= M; i += 4) {
        const T* a0 = a + static_cast<int64_t>(i) * K;
        const T* a1 = a0 + K;
        const T* a2 = a1 + K;
        const T* a3 = a2 + K;
        T* c0 = c + static_cast<int64_t>(i) * N;
        T* c1 = c0 + N;
        T* c2 = c1 + N;
        T* c3 = c2 + N;
        {
            T v0 = a0[0], v1 = a1[0], v2 = a2[0], v3 = a3[0];
            const T* br = b;
            for (int j = 0; j < N; ++j) {
                c0[j] = v0 * br[j];
                c1[j] = v1 * br[j];
                c2[j] = v2 * br[j];
                c3[j] = v3 * br[j];
            }
        }
        for (int k = 1; k < K; ++k) {
            T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            const T* br = b + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) {
                c0[j] += v0 * br[j];
                c1[j] += v1 * br[j];
                c2[j] += v2 * br[j];
                c3[j] += v3 * br[j];
            }
        }
    }
    for (; i < M; ++i) {
        T* cr = c + static_cast<int64_t>(i) * N;
        const T* ar = a + static_cast<int64_t>(i) * K;
        {
            T av = ar[0];
            const T* br = b;
            for (int j = 0; j < N; ++j) cr[j] = av * br[j];
        }
        for (int k = 1; k < K; ++k) {
            T av = ar[k];
            const T* br = b + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) cr[j] += av * br[j];
        }
    }
}

// C[i,j] = sum_k A[i,k] B[j,k]. B is transposed into thread-local scratch so
// the j-contiguous nn kernel applies; the per-output accumulation order is
// unchanged (k ascending).
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int M, int K, int N) {
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<size_t>(K) * N);
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < K; ++k) scratch[static_cast<size_t>(k) * N + j] = b[static_cast<int64_t>(j) * K + k];
    gemm_nn(a, scratch.data(), c, M, K, N);
}

// C[k,j] = sum_i A[i,k] B[i,j]  (first operand transposed)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int M, int K, int N) {
    {
        const T* ar = a;
        const T* br = b;
        for (int k = 0; k < K; ++k) {
            T av = ar[k];
            T* cr = c + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) cr[j] = av * br[j];
        }
    }
    for (int i = 1; i < M; ++i) {
        const T* ar = a + static_cast<int64_t>(i) * K;
        const T* br = b + static_cast<int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            T av = ar[k];
            T* cr = c + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) cr[j] += av * br[j];
        }
    }
}

}  // namespace detail

// Reverse-mode tape. Operations append nodes holding the forward value and a
// backward closure; backward() walks nodes in reverse creation order. Nodes
// whose inputs carry no gradient skip the closure entirely, so inference
// passes pay only for the forward math. Node storage is a deque so references
// returned by val() stay valid while the graph grows.
template <typename T>
class Tape {
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated on demand during backward
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void(Tape&)> backward;
    };

    std::deque<Node> nodes_;

    Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    bool rg(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

public:
    Tape() = default;

    size_t size() const { return nodes_.size(); }

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

    bool requires_grad(Var v) const { return rg(v); }

    // gradient of the last backward() root w.r.t. v; zeros if v was off-path
    Tensor<T> grad(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        if (n.has_grad) return n.grad;
        return Tensor<T>::zeros(n.value.shape);
    }

    void accum(Var v, const Tensor<T>& g) {
        Node& n = nodes_[static_cast<size_t>(v.id)];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = Tensor<T>::zeros(n.value.shape);
            n.has_grad = true;
        }
        for (int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    Var leaf(Tensor<T> value, bool requires_grad) { return push(std::move(value), requires_grad, nullptr); }

    void backward(Var root) {
        MOOG_REQUIRE(val(root).size() == 1, "backward root must be scalar, got " + shape_str(val(root).shape));
        Node& r = nodes_[static_cast<size_t>(root.id)];
        MOOG_REQUIRE(r.requires_grad, "backward root does not depend on any trainable leaf");
        r.grad = Tensor<T>::full(r.value.shape, T(1));
        r.has_grad = true;
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.has_grad && n.backward) n.backward(*this);
        }
    }

private:
    // push with a closure that can reference the new node's own id
    Var push_with_self(Tensor<T> value, bool requires_grad,
                       std::function<void(Tape&, Var)> backward) {
        Var v = push(std::move(value), requires_grad, nullptr);
        if (requires_grad && backward) {
            Node& n = nodes_[static_cast<size_t>(v.id)];
            n.backward = [v, f = std::move(backward)](Tape& t) { f(t, v); };
        }
        return v;
    }

public:
    // ---- elementwise ----

    Var add(Var a, Var b) {
        MOOG_REQUIRE(val(a).same_shape(val(b)), "add: shape mismatch " + shape_str(val(a).shape) + " vs " + shape_str(val(b).shape));
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            t.accum(a, g);
            t.accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        MOOG_REQUIRE(val(a).same_shape(val(b)), "sub: shape mismatch " + shape_str(val(a).shape) + " vs " + shape_str(val(b).shape));
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            t.accum(a, g);
            Tensor<T> ng = g;
            for (auto& x : ng.data) x = -x;
            t.accum(b, ng);
        });
    }

    Var mul(Var a, Var b) {
        MOOG_REQUIRE(val(a).same_shape(val(b)), "mul: shape mismatch " + shape_str(val(a).shape) + " vs " + shape_str(val(b).shape));
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            if (t.rg(a)) {
                Tensor<T> ga = g;
                const Tensor<T>& vb2 = t.val(b);
                for (int64_t i = 0; i < ga.size(); ++i) ga[i] *= vb2[i];
                t.accum(a, ga);
            }
            if (t.rg(b)) {
                Tensor<T> gb = g;
                const Tensor<T>& va2 = t.val(a);
                for (int64_t i = 0; i < gb.size(); ++i) gb[i] *= va2[i];
                t.accum(b, gb);
            }
        });
    }

    Var scale(Var a, T s) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x *= s;
        return push_with_self(std::move(out), rg(a), [a, s](Tape& t, Var self) {
            Tensor<T> g = t.nodes_[static_cast<size_t>(self.id)].grad;
            for (auto& x : g.data) x *= s;
            t.accum(a, g);
        });
    }

    Var add_scalar(Var a, T s) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x += s;
        return push_with_self(std::move(out), rg(a), [a](Tape& t, Var self) {
            t.accum(a, t.nodes_[static_cast<size_t>(self.id)].grad);
        });
    }

    // x: [..., D] plus row vector b: [D]
    Var add_rowvec(Var x, Var b) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vb = val(b);
        int D = vx.last_dim();
        MOOG_REQUIRE(vb.rank() == 1 && vb.dim(0) == D,
                "add_rowvec: bias " + shape_str(vb.shape) + " does not match last dim of " + shape_str(vx.shape));
        Tensor<T> out = vx;
        int64_t rows = vx.rows_flat();
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < D; ++j) out[r * D + j] += vb[j];
        return push_with_self(std::move(out), rg(x) || rg(b), [x, b, D](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            t.accum(x, g);
            if (t.rg(b)) {
                Tensor<T> gb = Tensor<T>::zeros({D});
                int64_t rows = g.size() / D;
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < D; ++j) gb[j] += g[r * D + j];
                t.accum(b, gb);
            }
        });
    }

    // ---- shape ----

    Var reshape(Var a, std::vector<int> shape) {
        MOOG_REQUIRE(numel(shape) == val(a).size(),
                "reshape: cannot view " + shape_str(val(a).shape) + " as " + shape_str(shape));
        Tensor<T> out(std::move(shape), val(a).data);
        return push_with_self(std::move(out), rg(a), [a](Tape& t, Var self) {
            const Node& n = t.nodes_[static_cast<size_t>(self.id)];
            Tensor<T> g(t.val(a).shape, n.grad.data);
            t.accum(a, g);
        });
    }

    // [A,B,C] -> [B,A,C]
    Var transpose01(Var x) {
        const Tensor<T>& v = val(x);
        MOOG_REQUIRE(v.rank() == 3, "transpose01 expects rank-3, got " + shape_str(v.shape));
        int A = v.dim(0), B = v.dim(1), C = v.dim(2);
        Tensor<T> out = Tensor<T>::uninit({B, A, C});
        for (int a = 0; a < A; ++a)
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) out[(static_cast<int64_t>(b) * A + a) * C + c] = v[(static_cast<int64_t>(a) * B + b) * C + c];
        return push_with_self(std::move(out), rg(x), [x, A, B, C](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            Tensor<T> gx({A, B, C});
            for (int b = 0; b < B; ++b)
                for (int a = 0; a < A; ++a)
                    for (int c = 0; c < C; ++c) gx[(static_cast<int64_t>(a) * B + b) * C + c] = g[(static_cast<int64_t>(b) * A + a) * C + c];
            t.accum(x, gx);
        });
    }

    // rank-2 row concatenation: [N0,D],[N1,D],... -> [sum N, D]
    Var concat_rows(const std::vector<Var>& parts) {
        MOOG_REQUIRE(!parts.empty(), "concat_rows: empty input");
        int D = val(parts[0]).last_dim();
        int total = 0;
        bool need = false;
        for (Var p : parts) {
            const Tensor<T>& v = val(p);
            MOOG_REQUIRE(v.rank() == 2 && v.dim(1) == D, "concat_rows: shape mismatch " + shape_str(v.shape));
            total += v.dim(0);
            need = need || rg(p);
        }
        Tensor<T> out({total, D});
        int64_t off = 0;
        for (Var p : parts) {
            const Tensor<T>& v = val(p);
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
            off += v.size();
        }
        return push_with_self(std::move(out), need, [parts, D](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            int64_t off2 = 0;
            for (Var p : parts) {
                const Tensor<T>& v = t.val(p);
                if (t.rg(p)) {
                    Tensor<T> gp(v.shape);
                    std::copy(g.data.begin() + off2, g.data.begin() + off2 + v.size(), gp.data.begin());
                    t.accum(p, gp);
                }
                off2 += v.size();
            }
        });
    }

    // ---- matmul family ----

    // a: [M,K] x b: [K,N] -> [M,N]
    Var matmul(Var a, Var b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        MOOG_REQUIRE(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0),
                "matmul: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
        int M = va.dim(0), K = va.dim(1), N = vb.dim(1);
        Tensor<T> out = Tensor<T>::uninit({M, N});
        detail::gemm_nn(va.data.data(), vb.data.data(), out.data.data(), M, K, N);
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b, M, K, N](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            if (t.rg(a)) {
                Tensor<T> ga({M, K});
                detail::gemm_nt(g.data.data(), t.val(b).data.data(), ga.data.data(), M, N, K);
                t.accum(a, ga);
            }
            if (t.rg(b)) {
                Tensor<T> gb({K, N});
                detail::gemm_tn(t.val(a).data.data(), g.data.data(), gb.data.data(), M, K, N);
                t.accum(b, gb);
            }
        });
    }

    // a: [B,M,K] x b: [B,K,N] -> [B,M,N]
    Var bmm(Var a, Var b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        MOOG_REQUIRE(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(1),
                "bmm: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
        int B = va.dim(0), M = va.dim(1), K = va.dim(2), N = vb.dim(2);
        Tensor<T> out = Tensor<T>::uninit({B, M, N});
        for (int i = 0; i < B; ++i)
            detail::gemm_nn(va.data.data() + static_cast<int64_t>(i) * M * K,
                            vb.data.data() + static_cast<int64_t>(i) * K * N,
                            out.data.data() + static_cast<int64_t>(i) * M * N, M, K, N);
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b, B, M, K, N](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            if (t.rg(a)) {
                Tensor<T> ga({B, M, K});
                for (int i = 0; i < B; ++i)
                    detail::gemm_nt(g.data.data() + static_cast<int64_t>(i) * M * N,
                                    t.val(b).data.data() + static_cast<int64_t>(i) * K * N,
                                    ga.data.data() + static_cast<int64_t>(i) * M * K, M, N, K);
                t.accum(a, ga);
            }
            if (t.rg(b)) {
                Tensor<T> gb({B, K, N});
                for (int i = 0; i < B; ++i)
                    detail::gemm_tn(t.val(a).data.data() + static_cast<int64_t>(i) * M * K,
                                    g.data.data() + static_cast<int64_t>(i) * M * N,
                                    gb.data.data() + static_cast<int64_t>(i) * K * N, M, K, N);
                t.accum(b, gb);
            }
        });
    }

    // a: [B,M,K] x b: [B,N,K] -> [B,M,N]  (second operand transposed)
    Var bmm_nt(Var a, Var b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        MOOG_REQUIRE(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
                "bmm_nt: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
        int B = va.dim(0), M = va.dim(1), K = va.dim(2), N = vb.dim(1);
        Tensor<T> out = Tensor<T>::uninit({B, M, N});
        for (int i = 0; i < B; ++i)
            detail::gemm_nt(va.data.data() + static_cast<int64_t>(i) * M * K,
                            vb.data.data() + static_cast<int64_t>(i) * N * K,
                            out.data.data() + static_cast<int64_t>(i) * M * N, M, K, N);
        return push_with_self(std::move(out), rg(a) || rg(b), [a, b, B, M, K, N](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            if (t.rg(a)) {
                Tensor<T> ga({B, M, K});
                for (int i = 0; i < B; ++i)
                    detail::gemm_nn(g.data.data() + static_cast<int64_t>(i) * M * N,
                                    t.val(b).data.data() + static_cast<int64_t>(i) * N * K,
                                    ga.data.data() + static_cast<int64_t>(i) * M * K, M, N, K);
                t.accum(a, ga);
            }
            if (t.rg(b)) {
                Tensor<T> gb({B, N, K});
                for (int i = 0; i < B; ++i)
                    detail::gemm_tn(g.data.data() + static_cast<int64_t>(i) * M * N,
                                    t.val(a).data.data() + static_cast<int64_t>(i) * M * K,
                                    gb.data.data() + static_cast<int64_t>(i) * N * K, M, N, K);
                t.accum(b, gb);
            }
        });
    }

    // ---- normalization / nonlinearity ----

    Var softmax_last(Var x) {
        const Tensor<T>& v = val(x);
        int D = v.last_dim();
        int64_t rows = v.rows_flat();
        Tensor<T> out = Tensor<T>::uninit(v.shape);
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = v.data.data() + r * D;
            T* o = out.data.data() + r * D;
            T mx = in[0];
            for (int j = 1; j < D; ++j) mx = std::max(mx, in[j]);
            T sum = 0;
            for (int j = 0; j < D; ++j) {
                o[j] = detail::fast_exp(in[j] - mx);
                sum += o[j];
            }
            T inv = T(1) / sum;
            for (int j = 0; j < D; ++j) o[j] *= inv;
        }
        return push_with_self(std::move(out), rg(x), [x, D](Tape& t, Var self) {
            const Node& n = t.nodes_[static_cast<size_t>(self.id)];
            const Tensor<T>& y = n.value;
            const Tensor<T>& g = n.grad;
            Tensor<T> gx(y.shape);
            int64_t rows = y.size() / D;
            for (int64_t r = 0; r < rows; ++r) {
                const T* yr = y.data.data() + r * D;
                const T* gr = g.data.data() + r * D;
                T dot = 0;
                for (int j = 0; j < D; ++j) dot += yr[j] * gr[j];
                T* o = gx.data.data() + r * D;
                for (int j = 0; j < D; ++j) o[j] = yr[j] * (gr[j] - dot);
            }
            t.accum(x, gx);
        });
    }

    // x / sqrt(mean(x^2) + eps) over the last axis; no learned scale
    Var rms_norm_last(Var x, T eps) {
        const Tensor<T>& v = val(x);
        int D = v.last_dim();
        int64_t rows = v.rows_flat();
        Tensor<T> out = Tensor<T>::uninit(v.shape);
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = v.data.data() + r * D;
            T ms = 0;
            for (int j = 0; j < D; ++j) ms += in[j] * in[j];
            ms /= static_cast<T>(D);
            T inv = T(1) / std::sqrt(ms + eps);
            T* o = out.data.data() + r * D;
            for (int j = 0; j < D; ++j) o[j] = in[j] * inv;
        }
        return push_with_self(std::move(out), rg(x), [x, D, eps](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(x);
            Tensor<T> gx(v2.shape);
            int64_t rows = v2.size() / D;
            for (int64_t r = 0; r < rows; ++r) {
                const T* in = v2.data.data() + r * D;
                const T* gr = g.data.data() + r * D;
                T ms = 0, dot = 0;
                for (int j = 0; j < D; ++j) ms += in[j] * in[j];
                ms = ms / static_cast<T>(D) + eps;
                T inv = T(1) / std::sqrt(ms);
                for (int j = 0; j < D; ++j) dot += gr[j] * in[j];
                T c = inv * inv * inv * dot / static_cast<T>(D);
                T* o = gx.data.data() + r * D;
                for (int j = 0; j < D; ++j) o[j] = inv * gr[j] - c * in[j];
            }
            t.accum(x, gx);
        });
    }

    // per-last-axis standardization with learned affine
    Var layer_norm(Var x, Var gamma, Var beta, T eps) {
        const Tensor<T>& v = val(x);
        int D = v.last_dim();
        MOOG_REQUIRE(val(gamma).rank() == 1 && val(gamma).dim(0) == D && val(beta).rank() == 1 && val(beta).dim(0) == D,
                "layer_norm: affine params must be [" + std::to_string(D) + "]");
        int64_t rows = v.rows_flat();
        Tensor<T> out(v.shape);
        const T* gm = val(gamma).data.data();
        const T* bt = val(beta).data.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = v.data.data() + r * D;
            T mean = 0;
            for (int j = 0; j < D; ++j) mean += in[j];
            mean /= static_cast<T>(D);
            T var = 0;
            for (int j = 0; j < D; ++j) {
                T d = in[j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(D);
            T inv = T(1) / std::sqrt(var + eps);
            T* o = out.data.data() + r * D;
            for (int j = 0; j < D; ++j) o[j] = gm[j] * ((in[j] - mean) * inv) + bt[j];
        }
        return push_with_self(std::move(out), rg(x) || rg(gamma) || rg(beta),
                              [x, gamma, beta, D, eps](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(x);
            const T* gm = t.val(gamma).data.data();
            int64_t rows = v2.size() / D;
            Tensor<T> gx, ggamma, gbeta;
            bool wx = t.rg(x), wg = t.rg(gamma), wb = t.rg(beta);
            if (wx) gx = Tensor<T>::zeros(v2.shape);
            if (wg) ggamma = Tensor<T>::zeros({D});
            if (wb) gbeta = Tensor<T>::zeros({D});
            for (int64_t r = 0; r < rows; ++r) {
                const T* in = v2.data.data() + r * D;
                const T* gr = g.data.data() + r * D;
                T mean = 0;
                for (int j = 0; j < D; ++j) mean += in[j];
                mean /= static_cast<T>(D);
                T var = 0;
                for (int j = 0; j < D; ++j) {
                    T d = in[j] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(D);
                T inv = T(1) / std::sqrt(var + eps);
                if (wg || wb) {
                    for (int j = 0; j < D; ++j) {
                        T xhat = (in[j] - mean) * inv;
                        if (wg) ggamma[j] += gr[j] * xhat;
                        if (wb) gbeta[j] += gr[j];
                    }
                }
                if (wx) {
                    T mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (int j = 0; j < D; ++j) {
                        T xhat = (in[j] - mean) * inv;
                        T dxhat = gr[j] * gm[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= static_cast<T>(D);
                    mean_dxhat_xhat /= static_cast<T>(D);
                    T* o = gx.data.data() + r * D;
                    for (int j = 0; j < D; ++j) {
                        T xhat = (in[j] - mean) * inv;
                        T dxhat = gr[j] * gm[j];
                        o[j] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
            if (wx) t.accum(x, gx);
            if (wg) t.accum(gamma, ggamma);
            if (wb) t.accum(beta, gbeta);
        });
    }

    // tanh-form gelu: 0.5 x (1 + tanh(c (x + a x^3)))
    Var gelu(Var x) {
        constexpr T c = T(0.797884560802865);  // sqrt(2/pi)
        constexpr T a = T(0.044715);
        const Tensor<T>& v = val(x);
        Tensor<T> out = Tensor<T>::uninit(v.shape);
        auto th_saved = std::make_shared<Tensor<T>>(Tensor<T>::uninit(v.shape));
        for (int64_t i = 0; i < v.size(); ++i) {
            T xv = v[i];
            T th = detail::fast_tanh(c * (xv + a * xv * xv * xv));
            (*th_saved)[i] = th;
            out[i] = T(0.5) * xv * (T(1) + th);
        }
        return push_with_self(std::move(out), rg(x), [x, th_saved](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(x);
            Tensor<T> gx = Tensor<T>::uninit(v2.shape);
            for (int64_t i = 0; i < v2.size(); ++i) {
                T xv = v2[i];
                T th = (*th_saved)[i];
                T du = c * (T(1) + T(3) * a * xv * xv);
                gx[i] = g[i] * (T(0.5) * (T(1) + th) + T(0.5) * xv * (T(1) - th * th) * du);
            }
            t.accum(x, gx);
        });
    }

    Var sigmoid(Var x) {
        const Tensor<T>& v = val(x);
        Tensor<T> out = Tensor<T>::uninit(v.shape);
        for (int64_t i = 0; i < v.size(); ++i) out[i] = detail::fast_sigmoid(v[i]);
        return push_with_self(std::move(out), rg(x), [x](Tape& t, Var self) {
            const Node& n = t.nodes_[static_cast<size_t>(self.id)];
            Tensor<T> gx(n.value.shape);
            for (int64_t i = 0; i < gx.size(); ++i) {
                T y = n.value[i];
                gx[i] = n.grad[i] * y * (T(1) - y);
            }
            t.accum(x, gx);
        });
    }

    // ---- convolution (SAME padding, odd kernel) ----

    // x: [H,W,Cin], k: [kh,kw,Cin,Cout], b: [Cout] -> [ceil(H/sh), ceil(W/sw), Cout]
    Var conv2d(Var x, Var k, Var b, int sh, int sw) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vk = val(k);
        MOOG_REQUIRE(vx.rank() == 3 && vk.rank() == 4, "conv2d: x " + shape_str(vx.shape) + ", k " + shape_str(vk.shape));
        int H = vx.dim(0), W = vx.dim(1), Cin = vx.dim(2);
        int kh = vk.dim(0), kw = vk.dim(1), Cout = vk.dim(3);
        MOOG_REQUIRE(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel dims must be odd");
        MOOG_REQUIRE(vk.dim(2) == Cin, "conv2d: channel mismatch, input has " + std::to_string(Cin) +
                                      ", kernel expects " + std::to_string(vk.dim(2)));
        MOOG_REQUIRE(val(b).rank() == 1 && val(b).dim(0) == Cout, "conv2d: bias must be [Cout]");
        int Ho = (H + sh - 1) / sh, Wo = (W + sw - 1) / sw;
        int pad_h = std::max((Ho - 1) * sh + kh - H, 0);
        int pad_w = std::max((Wo - 1) * sw + kw - W, 0);
        int top = pad_h / 2, left = pad_w / 2;

        int64_t rows = static_cast<int64_t>(Ho) * Wo;
        int64_t cols = static_cast<int64_t>(kh) * kw * Cin;
        // im2col patch matrix is kept for the backward pass
        auto col = std::make_shared<Tensor<T>>(Tensor<T>::zeros({static_cast<int>(rows), static_cast<int>(cols)}));
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                T* crow = col->data.data() + (static_cast<int64_t>(oy) * Wo + ox) * cols;
                for (int dy = 0; dy < kh; ++dy) {
                    int iy = oy * sh - top + dy;
                    if (iy < 0 || iy >= H) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        int ix = ox * sw - left + dx;
                        if (ix < 0 || ix >= W) continue;
                        const T* src = vx.data.data() + (static_cast<int64_t>(iy) * W + ix) * Cin;
                        std::copy(src, src + Cin, crow + (static_cast<int64_t>(dy) * kw + dx) * Cin);
                    }
                }
            }
        Tensor<T> out({Ho, Wo, Cout});
        detail::gemm_nn(col->data.data(), vk.data.data(), out.data.data(), static_cast<int>(rows),
                        static_cast<int>(cols), Cout);
        const T* bias = val(b).data.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < Cout; ++c) out[r * Cout + c] += bias[c];

        return push_with_self(std::move(out), rg(x) || rg(k) || rg(b),
                              [x, k, b, col, H, W, Cin, kh, kw, Cout, Ho, Wo, sh, sw, top, left](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            int64_t rows = static_cast<int64_t>(Ho) * Wo;
            int64_t cols = static_cast<int64_t>(kh) * kw * Cin;
            if (t.rg(b)) {
                Tensor<T> gb = Tensor<T>::zeros({Cout});
                for (int64_t r = 0; r < rows; ++r)
                    for (int c = 0; c < Cout; ++c) gb[c] += g[r * Cout + c];
                t.accum(b, gb);
            }
            if (t.rg(k)) {
                Tensor<T> gk({kh, kw, Cin, Cout});
                detail::gemm_tn(col->data.data(), g.data.data(), gk.data.data(), static_cast<int>(rows),
                                static_cast<int>(cols), Cout);
                t.accum(k, gk);
            }
            if (t.rg(x)) {
                Tensor<T> dcol({static_cast<int>(rows), static_cast<int>(cols)});
                detail::gemm_nt(g.data.data(), t.val(k).data.data(), dcol.data.data(), static_cast<int>(rows),
                                Cout, static_cast<int>(cols));
                Tensor<T> gx = Tensor<T>::zeros({H, W, Cin});
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const T* crow = dcol.data.data() + (static_cast<int64_t>(oy) * Wo + ox) * cols;
                        for (int dy = 0; dy < kh; ++dy) {
                            int iy = oy * sh - top + dy;
                            if (iy < 0 || iy >= H) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                int ix = ox * sw - left + dx;
                                if (ix < 0 || ix >= W) continue;
                                T* dst = gx.data.data() + (static_cast<int64_t>(iy) * W + ix) * Cin;
                                const T* src = crow + (static_cast<int64_t>(dy) * kw + dx) * Cin;
                                for (int c = 0; c < Cin; ++c) dst[c] += src[c];
                            }
                        }
                    }
                t.accum(x, gx);
            }
        });
    }

    // ---- reductions / losses ----

    Var sum_all(Var x) {
        T s = 0;
        for (const T& v : val(x).data) s += v;
        return push_with_self(Tensor<T>::scalar(s), rg(x), [x](Tape& t, Var self) {
            T g = t.nodes_[static_cast<size_t>(self.id)].grad[0];
            t.accum(x, Tensor<T>::full(t.val(x).shape, g));
        });
    }

    Var mean_all(Var x) { return scale(sum_all(x), T(1) / static_cast<T>(val(x).size())); }

    // [..., D] -> [...] summing the last axis
    Var sum_last(Var x) {
        const Tensor<T>& v = val(x);
        MOOG_REQUIRE(v.rank() >= 1, "sum_last needs rank >= 1");
        int D = v.last_dim();
        std::vector<int> oshape(v.shape.begin(), v.shape.end() - 1);
        if (oshape.empty()) oshape = {1};
        Tensor<T> out(oshape);
        int64_t rows = v.rows_flat();
        for (int64_t r = 0; r < rows; ++r) {
            T s = 0;
            const T* in = v.data.data() + r * D;
            for (int j = 0; j < D; ++j) s += in[j];
            out[r] = s;
        }
        return push_with_self(std::move(out), rg(x), [x, D](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(x);
            Tensor<T> gx(v2.shape);
            int64_t rows = v2.size() / D;
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < D; ++j) gx[r * D + j] = g[r];
            t.accum(x, gx);
        });
    }

    // sum(x * w) with constant weights; the workhorse for masked means
    Var weighted_sum(Var x, const Tensor<T>& w) {
        MOOG_REQUIRE(val(x).same_shape(w), "weighted_sum: weight shape " + shape_str(w.shape) +
                                          " vs value " + shape_str(val(x).shape));
        T s = 0;
        const Tensor<T>& v = val(x);
        for (int64_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
        auto wp = std::make_shared<Tensor<T>>(w);
        return push_with_self(Tensor<T>::scalar(s), rg(x), [x, wp](Tape& t, Var self) {
            T g = t.nodes_[static_cast<size_t>(self.id)].grad[0];
            Tensor<T> gx = *wp;
            for (auto& u : gx.data) u *= g;
            t.accum(x, gx);
        });
    }

    // elementwise Huber on squared distances s: f(s) = 0.5*s for sqrt(s) <= delta,
    // else delta*(sqrt(s) - delta/2). C1 at the branch point.
    Var huber_from_sqdist(Var s, T delta) {
        const Tensor<T>& v = val(s);
        Tensor<T> out(v.shape);
        T d2 = delta * delta;
        for (int64_t i = 0; i < v.size(); ++i)
            out[i] = v[i] <= d2 ? T(0.5) * v[i] : delta * (std::sqrt(v[i]) - T(0.5) * delta);
        return push_with_self(std::move(out), rg(s), [s, delta, d2](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(s);
            Tensor<T> gx(v2.shape);
            for (int64_t i = 0; i < v2.size(); ++i)
                gx[i] = g[i] * (v2[i] <= d2 ? T(0.5) : delta / (T(2) * std::sqrt(v2[i])));
            t.accum(s, gx);
        });
    }

    // binary cross-entropy against constant targets, on logits
    Var bce_logits(Var x, const Tensor<T>& targets) {
        const Tensor<T>& v = val(x);
        MOOG_REQUIRE(v.same_shape(targets), "bce_logits: target shape mismatch");
        Tensor<T> out(v.shape);
        for (int64_t i = 0; i < v.size(); ++i) {
            T xv = v[i], z = targets[i];
            out[i] = std::max(xv, T(0)) - xv * z + std::log1p(std::exp(-std::abs(xv)));
        }
        auto tp = std::make_shared<Tensor<T>>(targets);
        return push_with_self(std::move(out), rg(x), [x, tp](Tape& t, Var self) {
            const Tensor<T>& g = t.nodes_[static_cast<size_t>(self.id)].grad;
            const Tensor<T>& v2 = t.val(x);
            Tensor<T> gx(v2.shape);
            for (int64_t i = 0; i < v2.size(); ++i) {
                T xv = v2[i];
                T sig = xv >= 0 ? T(1) / (T(1) + std::exp(-xv)) : std::exp(xv) / (T(1) + std::exp(xv));
                gx[i] = g[i] * (sig - (*tp)[i]);
            }
            t.accum(x, gx);
        });
    }
};

}  // namespace moog
