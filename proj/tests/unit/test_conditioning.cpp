// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trifield/conditioning.hpp"

using namespace trifield;
using ad::Tape;
using ad::Var;

TEST_SUITE_BEGIN("conditioning");

TEST_CASE("encoder emits the halving/channel-doubling geometry") {
    Rng rng(1);
    ParamStore store;
    auto h = add_encoder_params(store, {.in_channels = 3, .base_channels = 8}, rng);
    Tensor img({64, 64, 3});
    for (auto& x : img.v) x = rng.uniform();
    auto f = encode_values(img, store, h);
    CHECK(f.y1.shape == std::vector<int>{32, 32, 8});
    CHECK(f.y2.shape == std::vector<int>{16, 16, 16});
    CHECK(f.y3.shape == std::vector<int>{8, 8, 32});
}

TEST_CASE("zero image with zero biases gives all-zero features") {
    Rng rng(2);
    ParamStore store;
    auto h = add_encoder_params(store, {.in_channels = 3, .base_channels = 4}, rng);
    Tensor img({16, 16, 3});
    auto f = encode_values(img, store, h);
    for (double x : f.y1.v) CHECK(x == 0.0);
    for (double x : f.y2.v) CHECK(x == 0.0);
    for (double x : f.y3.v) CHECK(x == 0.0);
}

TEST_CASE("encoder rejects dims not divisible by 8") {
    Rng rng(3);
    ParamStore store;
    auto h = add_encoder_params(store, {.in_channels = 3, .base_channels = 4}, rng);
    Tape tape;
    auto bp = bind_params(tape, store);
    CHECK_THROWS_AS(encode(tape, tape.input(Tensor({20, 16, 3}), false), bp, h),
                    std::invalid_argument);
}

TEST_CASE("gradient of a y3 probe w.r.t. input pixels matches finite differences") {
    Rng rng(4);
    ParamStore store;
    auto h = add_encoder_params(store, {.in_channels = 3, .base_channels = 2}, rng);
    Tensor img({8, 8, 3});
    for (auto& x : img.v) x = rng.uniform(-1, 1);
    Tensor probe({1, 1, 8});
    for (auto& x : probe.v) x = rng.uniform(-1, 1);

    auto eval = [&](const Tensor& input) {
        Tape tape;
        auto bp = bind_params(tape, store);
        auto f = encode(tape, tape.input(input, true), bp, h);
        Var loss = tape.sum_all(tape.mul(f.y3, tape.constant(probe)));
        return std::pair<double, Tape>(tape.scalar_value(loss), std::move(tape));
    };

    Tape tape;
    auto bp = bind_params(tape, store);
    Var in = tape.input(img, true);
    auto f = encode(tape, in, bp, h);
    Var loss = tape.sum_all(tape.mul(f.y3, tape.constant(probe)));
    tape.backward(loss);
    const Tensor& g = tape.grad(in);

    const double hstep = 1e-5;
    for (int64_t i = 0; i < img.numel(); i += 7) {
        Tensor plus = img, minus = img;
        plus[i] += hstep;
        minus[i] -= hstep;
        const double fd = (eval(plus).first - eval(minus).first) / (2 * hstep);
        CHECK(oracles::rel_err(fd, g[i], 1e-9) < 1e-4);
    }
}

TEST_CASE("patch partition: P equal to the map size gives one patch") {
    Rng rng(5);
    Tensor map({8, 8, 2});
    for (auto& x : map.v) x = rng.normal();
    auto ps = patch_partition(map, 8);
    CHECK(ps.k_patches == 1);
    // single patch in row-major order equals the map
    for (int i = 0; i < 64; ++i)
        for (int c = 0; c < 2; ++c) CHECK(ps.tokens.at(i, c) == map.v[static_cast<size_t>(i) * 2 + c]);
}

TEST_CASE("patch partition round-trips exactly") {
    Rng rng(6);
    Tensor map({8, 8, 3});
    for (auto& x : map.v) x = rng.normal();
    auto ps = patch_partition(map, 4);
    CHECK(ps.k_patches == 4);
    Tensor back = patch_unpartition(ps);
    for (int64_t i = 0; i < map.numel(); ++i) CHECK(back[i] == map[i]);
}

TEST_CASE("first patch of a numbered 8x8 map holds the expected indices") {
    Tensor map({8, 8, 1});
    for (int i = 0; i < 64; ++i) map[i] = i;
    auto ps = patch_partition(map, 4);
    // index-arithmetic oracle: rows 0-3 of columns 0-3
    std::vector<int> expect;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) expect.push_back(r * 8 + c);
    for (size_t t = 0; t < 16; ++t) CHECK(ps.tokens.at(static_cast<int>(t), 0) == expect[t]);
}

TEST_CASE("patch partition rejects indivisible dimensions") {
    Tensor map({9, 8, 1});
    CHECK_THROWS_AS(patch_partition(map, 4), std::invalid_argument);
}

TEST_CASE("zero value projection makes cross attention the identity") {
    Rng rng(7);
    Tensor x({5, 4}), kv({6, 3});
    for (auto& v : x.v) v = rng.normal();
    for (auto& v : kv.v) v = rng.normal();
    Tensor wq({4, 4}), wk({4, 3}), wv({4, 3}), wo({4, 4});
    for (auto& v : wq.v) v = rng.normal();
    for (auto& v : wk.v) v = rng.normal();
    for (auto& v : wo.v) v = rng.normal();
    // wv stays zero
    Tensor out = cross_attend_values(x, kv, wq, wk, wv, wo);
    REQUIRE(out.shape == x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("single key/value token broadcasts its projected value") {
    Rng rng(8);
    Tensor x({3, 2}), kv({1, 2});
    for (auto& v : x.v) v = rng.normal();
    for (auto& v : kv.v) v = rng.normal();
    Tensor wq({2, 2}), wk({2, 2}), wv({2, 2}), wo({2, 2});
    for (auto& v : wq.v) v = rng.normal();
    for (auto& v : wk.v) v = rng.normal();
    for (auto& v : wv.v) v = rng.normal();
    for (auto& v : wo.v) v = rng.normal();
    Tensor out = cross_attend_values(x, kv, wq, wk, wv, wo, /*positional=*/false);
    // softmax over one element is 1, so every row adds wo * (wv * kv)
    double val[2];
    for (int a = 0; a < 2; ++a) val[a] = wv.at(a, 0) * kv[0] + wv.at(a, 1) * kv[1];
    double add[2];
    for (int o = 0; o < 2; ++o) add[o] = wo.at(o, 0) * val[0] + wo.at(o, 1) * val[1];
    for (int n = 0; n < 3; ++n)
        for (int o = 0; o < 2; ++o)
            CHECK(out.at(n, o) == doctest::Approx(x.at(n, o) + add[o]).epsilon(1e-12));
}

TEST_CASE("2x3 toy attention matches the scalar softmax oracle to 1e-12") {
    const Tensor x({2, 2}, {0.5, -1.0, 2.0, 0.25});
    const Tensor kv({3, 2}, {1.0, 0.0, -0.5, 1.5, 0.75, -0.25});
    const Tensor wq({2, 2}, {1.0, 0.5, -0.25, 1.0});
    const Tensor wk({2, 2}, {0.5, -1.0, 1.0, 0.75});
    const Tensor wv({2, 2}, {-0.5, 1.0, 0.25, 0.5});
    const Tensor wo({2, 2}, {1.0, -0.5, 0.5, 1.0});
    Tensor got = cross_attend_values(x, kv, wq, wk, wv, wo, /*positional=*/false);

    // scalar oracle
    auto matv = [](const Tensor& W, const double* in, double* out) {
        for (int o = 0; o < W.dim(0); ++o) {
            out[o] = 0;
            for (int i = 0; i < W.dim(1); ++i) out[o] += W.at(o, i) * in[i];
        }
    };
    double q[2][2], k[3][2], v[3][2];
    for (int n = 0; n < 2; ++n) matv(wq, &x.v[static_cast<size_t>(n) * 2], q[n]);
    for (int m = 0; m < 3; ++m) {
        matv(wk, &kv.v[static_cast<size_t>(m) * 2], k[m]);
        matv(wv, &kv.v[static_cast<size_t>(m) * 2], v[m]);
    }
    for (int n = 0; n < 2; ++n) {
        double logits[3], wsum = 0.0, attn[3];
        for (int m = 0; m < 3; ++m)
            logits[m] = (q[n][0] * k[m][0] + q[n][1] * k[m][1]) / std::sqrt(2.0);
        for (int m = 0; m < 3; ++m) wsum += std::exp(logits[m]);
        for (int m = 0; m < 3; ++m) attn[m] = std::exp(logits[m]) / wsum;
        double mixed[2] = {0, 0};
        for (int m = 0; m < 3; ++m)
            for (int a = 0; a < 2; ++a) mixed[a] += attn[m] * v[m][a];
        double proj[2];
        matv(wo, mixed, proj);
        for (int o = 0; o < 2; ++o)
            CHECK(std::abs(got.at(n, o) - (x.at(n, o) + proj[o])) < 1e-12);
    }
}

TEST_CASE("attention is permutation-invariant over patches without positions") {
    Rng rng(9);
    Tensor x({4, 3}), kv({8, 3});
    for (auto& v : x.v) v = rng.normal();
    for (auto& v : kv.v) v = rng.normal();
    Tensor wq({3, 3}), wk({3, 3}), wv({3, 3}), wo({3, 3});
    for (auto& v : wq.v) v = rng.normal();
    for (auto& v : wk.v) v = rng.normal();
    for (auto& v : wv.v) v = rng.normal();
    for (auto& v : wo.v) v = rng.normal();
    Tensor a = cross_attend_values(x, kv, wq, wk, wv, wo, false);
    // swap the two 4-token halves (patch blocks)
    Tensor kv2({8, 3});
    for (int t = 0; t < 8; ++t)
        for (int c = 0; c < 3; ++c) kv2.at(t, c) = kv.at((t + 4) % 8, c);
    Tensor b = cross_attend_values(x, kv2, wq, wk, wv, wo, false);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10));
}

TEST_CASE("projection width mismatches are rejected") {
    Tensor x({2, 2}), kv({2, 2});
    Tensor wq({3, 2}), wk({4, 2}), wv({3, 2}), wo({2, 3});
    CHECK_THROWS_AS(cross_attend_values(x, kv, wq, wk, wv, wo), std::invalid_argument);
}

TEST_CASE("condition dropout edge rates") {
    Rng rng(10);
    CHECK(!sample_condition_dropout(0.0, rng));
    CHECK(sample_condition_dropout(1.0, rng));
    CHECK_THROWS_AS(sample_condition_dropout(1.5, rng), std::invalid_argument);
}

TEST_CASE("condition dropout empirical rate is within the binomial 3-sigma band") {
    Rng rng(11);
    const int n = 100000;
    int dropped = 0;
    for (int i = 0; i < n; ++i)
        if (sample_condition_dropout(0.2, rng)) ++dropped;
    const double rate = static_cast<double>(dropped) / n;
    CHECK(std::abs(rate - 0.2) < 0.005);  // 3 sigma = 0.0038
}

TEST_CASE("dropped samples get broadcast null tokens with the right geometry") {
    NullTokens null_tokens;
    null_tokens.e1 = Tensor({4});
    null_tokens.e2 = Tensor({8});
    null_tokens.e3 = Tensor({16});
    null_tokens.e1.fill(0.5);
    auto f = null_condition(null_tokens, 32, 32);
    CHECK(f.y1.shape == std::vector<int>{16, 16, 4});
    CHECK(f.y2.shape == std::vector<int>{8, 8, 8});
    CHECK(f.y3.shape == std::vector<int>{4, 4, 16});
    for (double x : f.y1.v) CHECK(x == 0.5);

    MultiScaleFeatures feats;
    feats.y1 = Tensor({16, 16, 4});
    feats.y1.fill(1.0);
    feats.y2 = Tensor({8, 8, 8});
    feats.y3 = Tensor({4, 4, 16});
    Rng rng(12);
    auto kept = condition_dropout(feats, null_tokens, 0.0, rng);
    CHECK(kept.y1[0] == 1.0);
    auto dropped = condition_dropout(feats, null_tokens, 1.0, rng);
    CHECK(dropped.y1[0] == 0.5);
}

TEST_SUITE_END();
