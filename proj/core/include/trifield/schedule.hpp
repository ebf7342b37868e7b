// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>

#include "trifield/rng.hpp"
#include "trifield/tensor.hpp"
#include "trifield/triplane.hpp"

namespace trifield {

enum class ScheduleKind { linear, cosine_adjusted, sigmoid };

// Variance-preserving schedule t in [0,1] -> gamma(t) in (0,1) with
// alpha_t = sqrt(gamma), sigma_t = sqrt(1 - gamma). All kinds are affinely
// renormalized so gamma(0) = 1 - 1e-9 and gamma(1) = 1e-9, keeping logSNR
// finite at the endpoints.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear;
    double start = 0.0;
    double end = 0.0;
    double tau = 1.0;

    static NoiseSchedule linear() { return {ScheduleKind::linear, 0.0, 0.0, 1.0}; }
    static NoiseSchedule cosine_adjusted(double start, double end, double tau) {
        return {ScheduleKind::cosine_adjusted, start, end, tau};
    }
    static NoiseSchedule sigmoid(double start, double end, double tau) {
        return {ScheduleKind::sigmoid, start, end, tau};
    }
    // appendix configurations used by the cascade
    static NoiseSchedule base_default() { return cosine_adjusted(0.2, 1.0, 3.0); }
    static NoiseSchedule upsample_default() { return sigmoid(0.0, 3.0, 0.1); }
};

constexpr double kGammaClamp = 1e-9;

double gamma_of(const NoiseSchedule& s, double t);
double alpha_of(const NoiseSchedule& s, double t);
double sigma_of(const NoiseSchedule& s, double t);

// log(alpha^2 / sigma^2) = log(gamma / (1 - gamma)); strictly decreasing.
double log_snr(const NoiseSchedule& s, double t);

// Inverts log_snr by bisection; target must lie inside the attainable range.
double t_for_log_snr(const NoiseSchedule& s, double target);

// x_t = alpha_t * x0 + sigma_t * eps with eps ~ N(0, I); returns (x_t, eps).
std::pair<Tensor, Tensor> forward_diffuse(const Tensor& x0, double t, const NoiseSchedule& s,
                                          Rng& rng);
std::pair<Triplane, Triplane> forward_diffuse(const Triplane& x0, double t,
                                              const NoiseSchedule& s, Rng& rng);

std::string schedule_kind_name(ScheduleKind k);
ScheduleKind schedule_kind_from_name(const std::string& name);

}  // namespace trifield
