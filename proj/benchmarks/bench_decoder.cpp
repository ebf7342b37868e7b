// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "trifield/decoder.hpp"

using namespace trifield;

static void BM_Decode(benchmark::State& state) {
    DecoderConfig cfg{.feat_dim = 24, .hidden = static_cast<int>(state.range(0)), .depth = 3};
    Rng rng(1);
    auto params = make_decoder(cfg, rng);
    std::vector<double> feat(24);
    for (auto& x : feat) x = rng.uniform(-1, 1);
    for (auto _ : state) {
        auto out = decode(params, feat);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(BM_Decode)->Arg(32)->Arg(64);

static void BM_DecodeBackward(benchmark::State& state) {
    DecoderConfig cfg{.feat_dim = 24, .hidden = static_cast<int>(state.range(0)), .depth = 3};
    Rng rng(1);
    auto params = make_decoder(cfg, rng);
    std::vector<double> feat(24);
    for (auto& x : feat) x = rng.uniform(-1, 1);
    DecoderOutputGrad up{1.0, {0.5, -0.5, 0.25}};
    std::vector<double> gp(params.param_count(), 0.0), gf(24, 0.0);
    for (auto _ : state) {
        decode_backward(params, feat, up, gp, gf);
        benchmark::DoNotOptimize(gp.data());
    }
}
BENCHMARK(BM_DecodeBackward)->Arg(32)->Arg(64);
