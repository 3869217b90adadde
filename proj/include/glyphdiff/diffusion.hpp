// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>

#include "glyphdiff/errors.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/random.hpp"
#include "glyphdiff/schedule.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

/// One noising outcome: x_t plus the gaussian draw that produced it. The
/// draw is retained because the training objective regresses against it.
struct NoisySample {
    Tensor32 x_t;
    int t = 0;
    Tensor32 eps;
};

/// Mean and (isotropic) variance of one reverse kernel. Variance 0 is legal
/// only at t = 1, where the final step is deterministic.
struct ReverseStepParams {
    Tensor32 mean;
    double variance = 0.0;
};

/// Closed-form jump to step t: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
inline NoisySample q_sample(const Tensor32& x0, int t, const Tensor32& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!x0.same_shape(eps))
        throw UsageError("q_sample: eps shape " + shape_str(eps.shape) + " != x0 shape " + shape_str(x0.shape));
    const double ab = sched.alpha_bar(t);
    const float signal = static_cast<float>(std::sqrt(ab));
    const float noise = static_cast<float>(std::sqrt(1.0 - ab));
    NoisySample out;
    out.t = t;
    out.eps = eps;
    out.x_t = Tensor32(x0.shape);
    for (int64_t i = 0; i < x0.numel(); ++i) out.x_t[i] = signal * x0[i] + noise * eps[i];
    return out;
}

inline NoisySample q_sample(const GlyphImage& x0, int t, const Tensor32& eps, const NoiseSchedule& sched) {
    return q_sample(x0.to_tensor(), t, eps, sched);
}

/// Single-step transition: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) eps.
inline Tensor32 q_step(const Tensor32& x_prev, int t, const Tensor32& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!x_prev.same_shape(eps)) throw UsageError("q_step: shape mismatch");
    const double beta = sched.beta(t);
    const float keep = static_cast<float>(std::sqrt(1.0 - beta));
    const float mix = static_cast<float>(std::sqrt(beta));
    Tensor32 out(x_prev.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = keep * x_prev[i] + mix * eps[i];
    return out;
}

/// Reverse kernel parameters from the predicted noise:
///   mean = (x_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)
///   var  = beta_t for t > 1, 0 at t = 1.
inline ReverseStepParams reverse_step_params(const Tensor32& x_t, int t, const Tensor32& eps_hat,
                                             const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!x_t.same_shape(eps_hat)) throw UsageError("reverse_step_params: shape mismatch");
    if (!eps_hat.all_finite()) throw NumericError("reverse_step_params: non-finite noise prediction");
    const double beta = sched.beta(t);
    const double alpha = sched.alpha(t);
    const double ab = sched.alpha_bar(t);
    const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(alpha));
    const float eps_coef = static_cast<float>(beta / std::sqrt(1.0 - ab));

    ReverseStepParams out;
    out.mean = Tensor32(x_t.shape);
    for (int64_t i = 0; i < x_t.numel(); ++i) out.mean[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]);
    out.variance = t == 1 ? 0.0 : beta;
    return out;
}

/// Per-element mean squared error between the drawn and predicted noise.
/// x0 and t are part of the objective's signature but do not enter the
/// value; they are validated so misuse fails loudly.
inline double training_loss(const Tensor32& x0, int t, const Tensor32& eps, const Tensor32& eps_hat) {
    if (t < 1) throw UsageError("training_loss: timestep must be >= 1");
    if (!x0.same_shape(eps) || !eps.same_shape(eps_hat))
        throw UsageError("training_loss: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < eps.numel(); ++i) {
        const double d = static_cast<double>(eps[i]) - static_cast<double>(eps_hat[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(eps.numel());
}

inline double training_loss(const GlyphImage& x0, int t, const Tensor32& eps, const Tensor32& eps_hat) {
    return training_loss(x0.to_tensor(), t, eps, eps_hat);
}

/// Noise predictor as a function, so the chain can run against a trained
/// network or an analytic stand-in alike.
using EpsFn = std::function<Tensor32(const Tensor32& x_t, int t)>;

/// Ancestral chain: x_T ~ N(0, I), then x_{t-1} = mean + sigma_t * z down to
/// x_0. No fresh draw is made at t = 1 (that kernel is deterministic).
inline Tensor32 ancestral_sample(const EpsFn& eps_fn, const Shape& shape, const NoiseSchedule& sched,
                                 Rng& rng) {
    Tensor32 x(shape);
    for (auto& v : x.data) v = rng.gaussian_f();
    for (int t = sched.num_steps; t >= 1; --t) {
        const Tensor32 eps_hat = eps_fn(x, t);
        if (!eps_hat.all_finite()) throw NumericError("ancestral_sample: non-finite prediction at t=" + std::to_string(t));
        ReverseStepParams params = reverse_step_params(x, t, eps_hat, sched);
        if (t > 1) {
            const float sigma = static_cast<float>(std::sqrt(params.variance));
            for (int64_t i = 0; i < x.numel(); ++i) x[i] = params.mean[i] + sigma * rng.gaussian_f();
        } else {
            x = std::move(params.mean);
        }
    }
    return x;
}

}  // namespace glyphdiff
