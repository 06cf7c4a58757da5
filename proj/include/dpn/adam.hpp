#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "dpn/error.hpp"
#include "dpn/param_store.hpp"

namespace dpn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment estimates for every trainable entry of a ParamStore.
template <typename T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;
};

template <typename T>
AdamState<T> adam_init(const ParamStore<T>& params, AdamConfig config = {}) {
    AdamState<T> st{config, 0, {}, {}};
    for (const auto& [name, e] : params.entries()) {
        if (!e.trainable) continue;
        st.m.emplace(name, Tensor<T>(e.value.shape()));
        st.v.emplace(name, Tensor<T>(e.value.shape()));
    }
    return st;
}

/// Bias-corrected Adam with epsilon outside the square root:
///   w -= lr * m_hat / (sqrt(v_hat) + eps)
/// Gradient slots are zeroed afterwards; frozen entries are never touched.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& st) {
    if (!params.grads_ready()) throw StateError("adam_step: no gradients were computed since the last step");
    for (const auto& [name, _] : st.m) {
        if (!params.contains(name))
            throw StateError("adam_step: optimizer tracks '" + name + "' but the parameter store has no such entry");
        const auto& e = params.entry(name);
        if (!e.trainable) throw StateError("adam_step: entry '" + name + "' was frozen after optimizer init");
        if (!(e.grad.shape() == e.value.shape()))
            throw StateError("adam_step: gradient slot for '" + name + "' is missing or mis-shaped");
    }
    st.step += 1;
    const auto& c = st.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    for (auto& [name, m] : st.m) {
        auto& e = params.entry(name);
        auto& v = st.v.at(name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const T g = e.grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            e.value[i] = static_cast<T>(static_cast<double>(e.value[i]) - c.lr * mhat / (std::sqrt(vhat) + c.epsilon));
        }
    }
    params.zero_grads();
}

} // namespace dpn
