// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "trifield/schedule.hpp"

using namespace trifield;

static void BM_GammaCosine(benchmark::State& state) {
    const auto s = NoiseSchedule::base_default();
    double t = 0.0;
    for (auto _ : state) {
        t += 1e-6;
        if (t > 1.0) t = 0.0;
        benchmark::DoNotOptimize(gamma_of(s, t));
    }
}
BENCHMARK(BM_GammaCosine);

static void BM_ForwardDiffuse(benchmark::State& state) {
    const auto s = NoiseSchedule::base_default();
    Tensor x0({16, 48, 8});
    Rng init(1);
    for (auto& v : x0.v) v = init.normal();
    Rng rng(2);
    for (auto _ : state) {
        auto [xt, eps] = forward_diffuse(x0, 0.37, s, rng);
        benchmark::DoNotOptimize(xt.v.data());
    }
}
BENCHMARK(BM_ForwardDiffuse);

BENCHMARK_MAIN();
