// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "glyphdiff/errors.hpp"

namespace glyphdiff {

/// Variance schedule defaults. The chain length is deliberately short so a
/// full train/sample cycle fits on a CPU; the terminal beta is scaled up so
/// that the cumulative signal retention alpha_bar_T still falls below 0.05
/// and x_T is noise-dominated.
inline constexpr int kDefaultNumSteps = 200;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.032;

/// Precomputed variance schedule for the noising chain. Indexing is by
/// timestep t in [1, T]; betas[t-1] is the step-t variance. alpha_bars
/// carries the running product of (1 - beta) and is strictly decreasing.
/// Kept in double so the product identity holds to 1e-12 relative.
struct NoiseSchedule {
    int num_steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double beta(int t) const {
        check_t(t);
        return betas[static_cast<size_t>(t - 1)];
    }
    double alpha(int t) const {
        check_t(t);
        return alphas[static_cast<size_t>(t - 1)];
    }
    double alpha_bar(int t) const {
        check_t(t);
        return alpha_bars[static_cast<size_t>(t - 1)];
    }

    void check_t(int t) const {
        if (t < 1 || t > num_steps)
            throw UsageError("timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(num_steps) + "]");
    }
};

/// Linear interpolation of beta from beta_start (t=1) to beta_end (t=T).
inline NoiseSchedule build_linear_schedule(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw UsageError("schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw UsageError("schedule bounds must satisfy 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.num_steps = num_steps;
    s.betas.resize(static_cast<size_t>(num_steps));
    s.alphas.resize(static_cast<size_t>(num_steps));
    s.alpha_bars.resize(static_cast<size_t>(num_steps));

    double running = 1.0;
    for (int t = 1; t <= num_steps; ++t) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (num_steps - 1);
        const double beta = beta_start + frac * (beta_end - beta_start);
        const double alpha = 1.0 - beta;
        running *= alpha;
        s.betas[static_cast<size_t>(t - 1)] = beta;
        s.alphas[static_cast<size_t>(t - 1)] = alpha;
        s.alpha_bars[static_cast<size_t>(t - 1)] = running;
    }
    return s;
}

inline NoiseSchedule default_schedule() {
    return build_linear_schedule(kDefaultNumSteps, kDefaultBetaStart, kDefaultBetaEnd);
}

/// The three numbers that pin a linear schedule; stored in checkpoint
/// metadata so sampling always reuses the training-time chain.
struct ScheduleSpec {
    int num_steps = kDefaultNumSteps;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;

    NoiseSchedule build() const { return build_linear_schedule(num_steps, beta_start, beta_end); }
};

/// Writes "t,beta,alpha_bar,snr" rows; SNR = alpha_bar / (1 - alpha_bar).
inline void write_schedule_csv(const NoiseSchedule& s, std::ostream& os) {
    os << "t,beta,alpha_bar,snr\n";
    os.precision(12);
    for (int t = 1; t <= s.num_steps; ++t) {
        const double ab = s.alpha_bar(t);
        os << t << ',' << s.beta(t) << ',' << ab << ',' << ab / (1.0 - ab) << '\n';
    }
}

}  // namespace glyphdiff
