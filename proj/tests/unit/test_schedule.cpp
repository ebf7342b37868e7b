// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "trifield/schedule.hpp"

using namespace trifield;

TEST_SUITE_BEGIN("schedule");

namespace {
const NoiseSchedule kAll[] = {NoiseSchedule::linear(), NoiseSchedule::base_default(),
                              NoiseSchedule::upsample_default()};
}

TEST_CASE("endpoints renormalize to 1-1e-9 and 1e-9") {
    for (const auto& s : kAll) {
        CHECK(gamma_of(s, 0.0) == doctest::Approx(1.0 - 1e-9).epsilon(1e-15));
        CHECK(gamma_of(s, 1.0) == doctest::Approx(1e-9).epsilon(1e-6));
    }
}

TEST_CASE("golden value: cosine_adjusted(0.2, 1, 3) at t = 0.5") {
    // frozen from a 50-digit arbitrary-precision evaluation of the formula
    const double golden_gamma = 0.0557280908893850343616229;
    const double golden_logsnr = -2.829929819413446172370707;
    const auto s = NoiseSchedule::base_default();
    CHECK(std::abs(gamma_of(s, 0.5) - golden_gamma) < 1e-12);
    CHECK(std::abs(log_snr(s, 0.5) - golden_logsnr) < 1e-12);
}

TEST_CASE("golden value: sigmoid(0, 3, 0.1) at t = 0.1") {
    const double golden_gamma = 0.09485174716526066832599771;
    const auto s = NoiseSchedule::upsample_default();
    CHECK(std::abs(gamma_of(s, 0.1) - golden_gamma) < 1e-12);
}

TEST_CASE("gamma is strictly decreasing on a 1e-3 grid") {
    for (const auto& s : kAll) {
        double prev = gamma_of(s, 0.0);
        for (int i = 1; i <= 1000; ++i) {
            const double g = gamma_of(s, i / 1000.0);
            CHECK(g < prev);
            prev = g;
        }
    }
}

TEST_CASE("variance preserving: alpha^2 + sigma^2 = 1 to 1e-12") {
    for (const auto& s : kAll)
        for (int i = 0; i <= 100; ++i) {
            const double t = i / 100.0;
            const double a = alpha_of(s, t), sg = sigma_of(s, t);
            CHECK(std::abs(a * a + sg * sg - 1.0) < 1e-12);
        }
}

TEST_CASE("logSNR of gamma = 0.5 is zero and logSNR strictly decreases") {
    const auto s = NoiseSchedule::base_default();
    const double t_half = t_for_log_snr(s, 0.0);
    CHECK(gamma_of(s, t_half) == doctest::Approx(0.5).epsilon(1e-9));
    double prev = log_snr(s, 0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double v = log_snr(s, i / 1000.0);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("bisection hits the paper probe level logSNR = 0.57") {
    for (const auto& s : kAll) {
        const double t = t_for_log_snr(s, 0.57);
        CHECK(gamma_of(s, t) == doctest::Approx(0.6387631751488419).epsilon(1e-9));
    }
}

TEST_CASE("optimized schedules sit strictly below linear in logSNR") {
    const auto lin = NoiseSchedule::linear();
    const auto base = NoiseSchedule::base_default();
    const auto up = NoiseSchedule::upsample_default();
    for (int i = 1; i < 1000; ++i) {
        const double t = i / 1000.0;
        CHECK(log_snr(base, t) < log_snr(lin, t));
        CHECK(log_snr(up, t) < log_snr(lin, t));
    }
}

TEST_CASE("gamma rejects t outside [0,1]") {
    const auto s = NoiseSchedule::base_default();
    CHECK_THROWS_AS(gamma_of(s, -0.01), std::invalid_argument);
    CHECK_THROWS_AS(gamma_of(s, 1.01), std::invalid_argument);
}

TEST_CASE("forward diffuse at t to 0 leaves the signal almost untouched") {
    Tensor x0({8, 8, 2});
    Rng init(3);
    for (auto& v : x0.v) v = init.uniform(-1, 1);
    Rng rng(5);
    auto [xt, eps] = forward_diffuse(x0, 0.0, NoiseSchedule::base_default(), rng);
    const double sigma0 = std::sqrt(1e-9);  // ~3.2e-5
    for (int64_t i = 0; i < x0.numel(); ++i) {
        // alpha ~ 1 - 5e-10, so the deviation is dominated by sigma0 * |eps|
        CHECK(std::abs(xt[i] - x0[i]) <= sigma0 * std::abs(eps[i]) + 1e-9 * std::abs(x0[i]) + 1e-12);
    }
}

TEST_CASE("forward diffuse at t to 1 is standard normal (mean z-test)") {
    const int n = 100000;
    Tensor x0({n});
    x0.fill(0.8);  // constant signal fully destroyed at t = 1
    Rng rng(17);
    auto [xt, eps] = forward_diffuse(x0, 1.0, NoiseSchedule::base_default(), rng);
    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += xt[i];
    mean /= n;
    for (int64_t i = 0; i < n; ++i) var += (xt[i] - mean) * (xt[i] - mean);
    var /= n - 1;
    // |z| < 4 at n = 1e5
    CHECK(std::abs(mean) < 4.0 / std::sqrt(double(n)));
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("forward diffuse moments match alpha*x0 and sigma^2 (Monte Carlo)") {
    const int draws = 10000;
    const double t = 0.35;
    const auto s = NoiseSchedule::base_default();
    const double a = alpha_of(s, t), sg = sigma_of(s, t);
    Tensor x0({4});
    x0.v = {1.0, -2.0, 0.5, 3.0};
    Rng rng(23);
    std::vector<double> mean(4, 0.0), var(4, 0.0);
    std::vector<std::vector<double>> samples(4);
    for (int d = 0; d < draws; ++d) {
        auto [xt, eps] = forward_diffuse(x0, t, s, rng);
        for (int i = 0; i < 4; ++i) samples[i].push_back(xt[i]);
    }
    for (int i = 0; i < 4; ++i) {
        for (double v : samples[i]) mean[i] += v;
        mean[i] /= draws;
        for (double v : samples[i]) var[i] += (v - mean[i]) * (v - mean[i]);
        var[i] /= draws - 1;
        CHECK(std::abs(mean[i] - a * x0[i]) < 0.02 * std::max(1.0, std::abs(a * x0[i])) + 4 * sg / std::sqrt(double(draws)));
        CHECK(oracles::rel_err(var[i], sg * sg) < 0.06);
    }
}

TEST_CASE("forward diffuse is the exact linear map alpha*x0 + sigma*eps") {
    Tensor x0({6, 6, 1});
    Rng init(29);
    for (auto& v : x0.v) v = init.normal();
    const double t = 0.42;
    const auto s = NoiseSchedule::upsample_default();
    Rng rng(31);
    auto [xt, eps] = forward_diffuse(x0, t, s, rng);
    const double a = alpha_of(s, t), sg = sigma_of(s, t);
    for (int64_t i = 0; i < x0.numel(); ++i)
        CHECK(xt[i] == doctest::Approx(a * x0[i] + sg * eps[i]).epsilon(1e-15));
}

TEST_CASE("schedule kind names round-trip") {
    for (const auto& s : kAll)
        CHECK(schedule_kind_from_name(schedule_kind_name(s.kind)) == s.kind);
}

TEST_SUITE_END();
