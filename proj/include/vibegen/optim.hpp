#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vibegen/errors.hpp"

namespace vibegen {

/// Named view of one trainable buffer and its gradient.
template <class T>
struct ParamRef {
    std::string name;
    std::span<T> value;
    std::span<T> grad;
};

struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double weight_decay = 0.01;
    double eps = 1e-8;
};

/// First/second moments per parameter buffer, in the order the buffers are
/// passed to adamw_step.
template <class T>
struct AdamWState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    bool operator==(const AdamWState&) const = default;
};

/// One AdamW update with decoupled weight decay:
///   theta <- theta - lr * wd * theta
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// Gradients are left untouched. A non-finite gradient aborts before any
/// state changes.
template <class T>
void adamw_step(std::span<const ParamRef<T>> params, AdamWState<T>& state, const AdamWConfig& cfg) {
    for (const auto& p : params) {
        if (p.value.size() != p.grad.size())
            throw DimensionError("adamw: gradient of '" + p.name + "' does not match its parameter");
        for (std::size_t i = 0; i < p.grad.size(); ++i)
            if (!std::isfinite(double(p.grad[i])))
                throw DivergenceError("adamw: non-finite gradient in '" + p.name + "' at index " + std::to_string(i));
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value.size(), T(0));
            state.v.emplace_back(p.value.size(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("adamw: optimizer state holds " + std::to_string(state.m.size()) + " buffers, got " +
                             std::to_string(params.size()));

    ++state.step;
    const double t = double(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;

    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.value.size() || v.size() != p.value.size())
            throw DimensionError("adamw: moment buffers of '" + p.name + "' do not match the parameter");
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = double(p.grad[i]);
            const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = T(mi);
            v[i] = T(vi);
            double theta = double(p.value[i]) * decay;
            theta -= cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
            p.value[i] = T(theta);
        }
    }
}

template <class T>
void adamw_step(const std::vector<ParamRef<T>>& params, AdamWState<T>& state, const AdamWConfig& cfg) {
    adamw_step(std::span<const ParamRef<T>>(params), state, cfg);
}

}  // namespace vibegen
