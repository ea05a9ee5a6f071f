#pragma once

#include <cmath>

#include "moog/params.hpp"

namespace moog {

struct OptConfig {
    double peak_lr = 1e-4;
    double end_lr = 1e-7;
    int warmup_steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double clip_norm = 1.0;
};

// Linear warm-up from 0 to peak over [0, warmup], then half-cosine decay to
// the end value at total_steps.
inline double cosine_schedule(int64_t step, int warmup, double peak, double end, int64_t total_steps) {
    require(step >= 0 && step <= total_steps, "cosine_schedule: step out of range");
    require(warmup < total_steps, "cosine_schedule: warmup must be shorter than the run");
    if (step <= warmup) return warmup == 0 ? peak : peak * static_cast<double>(step) / warmup;
    double u = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return end + 0.5 * (peak - end) * (1.0 + std::cos(3.14159265358979323846 * u));
}

// Scale all gradients by max_norm/g when the global L2 norm g exceeds max_norm.
template <typename T>
void clip_global_norm(ParamSet<T>& grads, double max_norm) {
    require(max_norm > 0, "clip_global_norm: max_norm must be positive");
    double sq = 0;
    for (const auto& e : grads)
        for (const T& v : e.tensor.data) sq += static_cast<double>(v) * static_cast<double>(v);
    double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    T s = static_cast<T>(max_norm / norm);
    for (auto& e : grads)
        for (T& v : e.tensor.data) v *= s;
}

template <typename T>
double global_norm(const ParamSet<T>& grads) {
    double sq = 0;
    for (const auto& e : grads)
        for (const T& v : e.tensor.data) sq += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sq);
}

// Adam with Nesterov momentum (NAdam-style lookahead on the first moment).
// With t the 1-based step after increment:
//   m <- b1 m + (1-b1) g            v <- b2 v + (1-b2) g^2
//   m_hat = b1 m / (1 - b1^{t+1}) + (1-b1) g / (1 - b1^t)
//   v_hat = v / (1 - b2^t)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adam_nesterov_update(ParamSet<T>& params, const ParamSet<T>& grads, OptState<T>& st, double lr,
                          double b1 = 0.9, double b2 = 0.95, double eps = 1e-8) {
    for (const auto& g : grads)
        if (!g.tensor.all_finite()) fail("non-finite gradient in tensor: " + g.name);

    st.step += 1;
    double t = static_cast<double>(st.step);
    double bc1 = 1.0 - std::pow(b1, t);
    double bc1_next = 1.0 - std::pow(b1, t + 1.0);
    double bc2 = 1.0 - std::pow(b2, t);

    for (auto& e : params) {
        if (!e.trainable) continue;
        const Tensor<T>& g = grads.at(e.name);
        Tensor<T>& m = st.m.at(e.name);
        Tensor<T>& v = st.v.at(e.name);
        require(g.same_shape(e.tensor), "gradient shape mismatch for " + e.name);
        for (int64_t i = 0; i < e.tensor.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double m_hat = b1 * mi / bc1_next + (1.0 - b1) * gi / bc1;
            double v_hat = vi / bc2;
            e.tensor[i] = static_cast<T>(static_cast<double>(e.tensor[i]) - lr * m_hat / (std::sqrt(v_hat) + eps));
        }
    }
}

}  // namespace moog
