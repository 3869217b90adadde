// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "glyphdiff/autograd.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; applies to every parameter
};

/// Adam with decoupled weight decay. Moment state is keyed by parameter
/// path and updates run in sorted-name order, so a step is a pure function
/// of (state, grads) regardless of container iteration quirks.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamConfig cfg) : cfg_(cfg) {}

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return t_; }

    void step(const std::vector<std::pair<std::string, Var<T>>>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const auto& [name, var] : params) {
            auto& [m, v] = state_[name];
            if (!m.same_shape(var->value)) {
                m = Tensor<T>::zeros(var->value.shape);
                v = Tensor<T>::zeros(var->value.shape);
            }
            var->ensure_grad();
            const int64_t n = var->value.numel();
            for (int64_t i = 0; i < n; ++i) {
                const double g = static_cast<double>(var->grad[i]);
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double m_hat = mi / bc1;
                const double v_hat = vi / bc2;
                const double p = static_cast<double>(var->value[i]);
                var->value[i] = static_cast<T>(
                    p - cfg_.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p));
            }
        }
    }

    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>>& state() { return state_; }
    const std::map<std::string, std::pair<Tensor<T>, Tensor<T>>>& state() const { return state_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    AdamConfig cfg_;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> state_;
    int64_t t_ = 0;
};

/// Sorted (name, var) view over a parameter store, the canonical update order.
template <typename T, typename Store>
inline std::vector<std::pair<std::string, Var<T>>> named_params(Store& store) {
    std::vector<std::pair<std::string, Var<T>>> out;
    for (const auto& [name, var] : store) out.emplace_back(name, var);
    return out;
}

}  // namespace glyphdiff
