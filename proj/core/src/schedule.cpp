// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/schedule.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace trifield {

namespace {

constexpr int kLinearSteps = 1000;
constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 0.02;

// Cumulative alpha-bar knots of the standard linear beta ramp, index 0..1000.
const std::array<double, kLinearSteps + 1>& linear_alpha_bar() {
    static const auto table = [] {
        std::array<double, kLinearSteps + 1> t{};
        t[0] = 1.0;
        for (int k = 1; k <= kLinearSteps; ++k) {
            const double beta = kBetaStart + (kBetaEnd - kBetaStart) * (k - 1) / (kLinearSteps - 1.0);
            t[k] = t[k - 1] * (1.0 - beta);
        }
        return t;
    }();
    return table;
}

double raw_gamma(const NoiseSchedule& s, double t) {
    switch (s.kind) {
        case ScheduleKind::linear: {
            const auto& ab = linear_alpha_bar();
            const double pos = t * kLinearSteps;
            const int k = std::min(static_cast<int>(pos), kLinearSteps - 1);
            const double f = pos - k;
            return ab[k] * (1.0 - f) + ab[k + 1] * f;
        }
        case ScheduleKind::cosine_adjusted: {
            const double u = t * (s.end - s.start) + s.start;
            return std::pow(std::cos(u * M_PI / 2.0), 2.0 * s.tau);
        }
        case ScheduleKind::sigmoid: {
            const double u = t * (s.end - s.start) + s.start;
            return 1.0 / (1.0 + std::exp(u / s.tau));
        }
    }
    throw std::logic_error("unreachable schedule kind");
}

}  // namespace

double gamma_of(const NoiseSchedule& s, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("gamma: t outside [0,1]");
    const double r0 = raw_gamma(s, 0.0);
    const double r1 = raw_gamma(s, 1.0);
    const double norm = (raw_gamma(s, t) - r1) / (r0 - r1);
    return kGammaClamp + (1.0 - 2.0 * kGammaClamp) * norm;
}

double alpha_of(const NoiseSchedule& s, double t) { return std::sqrt(gamma_of(s, t)); }
double sigma_of(const NoiseSchedule& s, double t) { return std::sqrt(1.0 - gamma_of(s, t)); }

double log_snr(const NoiseSchedule& s, double t) {
    const double g = gamma_of(s, t);
    return std::log(g / (1.0 - g));
}

double t_for_log_snr(const NoiseSchedule& s, double target) {
    double lo = 0.0, hi = 1.0;
    if (target > log_snr(s, lo) || target < log_snr(s, hi))
        throw std::invalid_argument("t_for_log_snr: target outside attainable range");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (log_snr(s, mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::pair<Tensor, Tensor> forward_diffuse(const Tensor& x0, double t, const NoiseSchedule& s,
                                          Rng& rng) {
    const double a = alpha_of(s, t), sig = sigma_of(s, t);
    Tensor eps(x0.shape), xt(x0.shape);
    for (int64_t i = 0; i < x0.numel(); ++i) {
        eps[i] = rng.normal();
        xt[i] = a * x0[i] + sig * eps[i];
    }
    return {std::move(xt), std::move(eps)};
}

std::pair<Triplane, Triplane> forward_diffuse(const Triplane& x0, double t,
                                              const NoiseSchedule& s, Rng& rng) {
    Triplane xt = x0, eps = x0;
    const double a = alpha_of(s, t), sig = sigma_of(s, t);
    for (int k = 0; k < 3; ++k)
        for (int64_t i = 0; i < x0.planes[k].numel(); ++i) {
            eps.planes[k][i] = rng.normal();
            xt.planes[k][i] = a * x0.planes[k][i] + sig * eps.planes[k][i];
        }
    return {std::move(xt), std::move(eps)};
}

std::string schedule_kind_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::cosine_adjusted: return "cosine";
        case ScheduleKind::sigmoid: return "sigmoid";
    }
    throw std::logic_error("unreachable schedule kind");
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine" || name == "cosine_adjusted") return ScheduleKind::cosine_adjusted;
    if (name == "sigmoid") return ScheduleKind::sigmoid;
    throw std::invalid_argument("unknown schedule kind: " + name);
}

}  // namespace trifield
