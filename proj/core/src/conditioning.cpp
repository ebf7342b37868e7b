// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/conditioning.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace trifield {

namespace {
std::atomic<int64_t> g_encoder_calls{0};
}

int64_t encoder_call_count() { return g_encoder_calls.load(); }
void reset_encoder_call_count() { g_encoder_calls.store(0); }

EncoderHandles add_encoder_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
    EncoderHandles h;
    h.cfg = cfg;
    const int c = cfg.base_channels;
    h.w1 = store.add("enc.conv1.w", fanin_conv_init(c, cfg.in_channels, 3, rng));
    h.b1 = store.add("enc.conv1.b", Tensor({c}));
    h.w2 = store.add("enc.conv2.w", fanin_conv_init(2 * c, c, 3, rng));
    h.b2 = store.add("enc.conv2.b", Tensor({2 * c}));
    h.w3 = store.add("enc.conv3.w", fanin_conv_init(4 * c, 2 * c, 3, rng));
    h.b3 = store.add("enc.conv3.b", Tensor({4 * c}));
    return h;
}

MultiScaleVars encode(ad::Tape& tape, ad::Var image, const BoundParams& params,
                      const EncoderHandles& h) {
    const Tensor& img = tape.value(image);
    if (img.rank() != 3 || img.dim(2) != h.cfg.in_channels)
        throw std::invalid_argument("encode: expected [H,W,in_channels] image");
    if (img.dim(0) % 8 != 0 || img.dim(1) % 8 != 0)
        throw std::invalid_argument("encode: image dims must be divisible by 8");
    g_encoder_calls.fetch_add(1);
    MultiScaleVars out;
    out.y1 = tape.conv2d(image, params[h.w1], params[h.b1], 2);
    ad::Var a1 = tape.silu(out.y1);
    out.y2 = tape.conv2d(a1, params[h.w2], params[h.b2], 2);
    ad::Var a2 = tape.silu(out.y2);
    out.y3 = tape.conv2d(a2, params[h.w3], params[h.b3], 2);
    return out;
}

MultiScaleFeatures encode_values(const Tensor& image, const ParamStore& store,
                                 const EncoderHandles& h) {
    ad::Tape tape;
    auto bp = bind_params(tape, store);
    auto vars = encode(tape, tape.input(image, false), bp, h);
    return {tape.value(vars.y1), tape.value(vars.y2), tape.value(vars.y3)};
}

std::vector<int> patch_order_indices(int rows, int cols, int patch_size) {
    if (rows % patch_size != 0 || cols % patch_size != 0)
        throw std::invalid_argument("patch_partition: dims not divisible by patch size");
    std::vector<int> order;
    order.reserve(static_cast<size_t>(rows) * cols);
    for (int pi = 0; pi < rows / patch_size; ++pi)
        for (int pj = 0; pj < cols / patch_size; ++pj)
            for (int di = 0; di < patch_size; ++di)
                for (int dj = 0; dj < patch_size; ++dj)
                    order.push_back((pi * patch_size + di) * cols + pj * patch_size + dj);
    return order;
}

PatchSet patch_partition(const Tensor& feature_map, int patch_size) {
    if (feature_map.rank() != 3) throw std::invalid_argument("patch_partition: expected [H,W,C]");
    PatchSet ps;
    ps.rows = feature_map.dim(0);
    ps.cols = feature_map.dim(1);
    ps.channels = feature_map.dim(2);
    ps.patch_size = patch_size;
    ps.token_order = patch_order_indices(ps.rows, ps.cols, patch_size);
    ps.k_patches = (ps.rows / patch_size) * (ps.cols / patch_size);
    ps.tokens = Tensor({ps.rows * ps.cols, ps.channels});
    for (size_t t = 0; t < ps.token_order.size(); ++t) {
        const int src = ps.token_order[t];
        for (int c = 0; c < ps.channels; ++c)
            ps.tokens.at(static_cast<int>(t), c) =
                feature_map.v[static_cast<size_t>(src) * ps.channels + c];
    }
    return ps;
}

Tensor patch_unpartition(const PatchSet& ps) {
    Tensor out({ps.rows, ps.cols, ps.channels});
    for (size_t t = 0; t < ps.token_order.size(); ++t) {
        const int dst = ps.token_order[t];
        for (int c = 0; c < ps.channels; ++c)
            out.v[static_cast<size_t>(dst) * ps.channels + c] = ps.tokens.at(static_cast<int>(t), c);
    }
    return out;
}

Tensor sinusoidal_positions(int count, int dims) {
    Tensor table({count, dims});
    for (int p = 0; p < count; ++p)
        for (int d = 0; d < dims; ++d) {
            const double rate = std::pow(10000.0, -2.0 * (d / 2) / std::max(1, dims));
            table.at(p, d) = (d % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
        }
    return table;
}

ad::Var cross_attend(ad::Tape& tape, ad::Var x_tokens, ad::Var kv_tokens, ad::Var wq, ad::Var wk,
                     ad::Var wv, ad::Var wo, bool positional) {
    const Tensor& tx = tape.value(x_tokens);
    const Tensor& tkv = tape.value(kv_tokens);
    if (tx.rank() != 2 || tkv.rank() != 2)
        throw std::invalid_argument("cross_attend: token tensors must be [N,C]");
    const int attn_width = tape.value(wq).dim(0);
    if (tape.value(wk).dim(0) != attn_width || tape.value(wv).dim(0) != attn_width ||
        tape.value(wo).dim(1) != attn_width || tape.value(wo).dim(0) != tx.dim(1))
        throw std::invalid_argument("cross_attend: projection width mismatch");
    if (tape.value(wq).dim(1) != tx.dim(1) || tape.value(wk).dim(1) != tkv.dim(1) ||
        tape.value(wv).dim(1) != tkv.dim(1))
        throw std::invalid_argument("cross_attend: projection width mismatch");

    ad::Var kv = kv_tokens;
    if (positional)
        kv = tape.add(kv, tape.constant(sinusoidal_positions(tkv.dim(0), tkv.dim(1))));

    ad::Var zq = tape.constant(Tensor({attn_width}));
    ad::Var q = tape.linear(x_tokens, wq, zq);
    ad::Var k = tape.linear(kv, wk, zq);
    ad::Var v = tape.linear(kv, wv, zq);
    ad::Var logits = tape.scale(tape.matmul_bt(q, k), 1.0 / std::sqrt(double(attn_width)));
    ad::Var attn = tape.softmax_rows(logits);
    ad::Var mixed = tape.matmul(attn, v);
    ad::Var zo = tape.constant(Tensor({tx.dim(1)}));
    ad::Var projected = tape.linear(mixed, wo, zo);
    return tape.add(x_tokens, projected);
}

Tensor cross_attend_values(const Tensor& x_tokens, const Tensor& kv_tokens, const Tensor& wq,
                           const Tensor& wk, const Tensor& wv, const Tensor& wo, bool positional) {
    ad::Tape tape;
    ad::Var out = cross_attend(tape, tape.input(x_tokens, false), tape.input(kv_tokens, false),
                               tape.input(wq, false), tape.input(wk, false),
                               tape.input(wv, false), tape.input(wo, false), positional);
    return tape.value(out);
}

bool sample_condition_dropout(double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("condition_dropout: rate outside [0,1]");
    if (rate <= 0.0) return false;
    if (rate >= 1.0) return true;
    return rng.bernoulli(rate);
}

namespace {
Tensor broadcast_token(const Tensor& token, int h, int w) {
    Tensor out({h, w, token.dim(0)});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < token.dim(0); ++c) out.at(i, j, c) = token[c];
    return out;
}
}  // namespace

MultiScaleFeatures null_condition(const NullTokens& null_tokens, int cond_h, int cond_w) {
    MultiScaleFeatures f;
    f.y1 = broadcast_token(null_tokens.e1, cond_h / 2, cond_w / 2);
    f.y2 = broadcast_token(null_tokens.e2, cond_h / 4, cond_w / 4);
    f.y3 = broadcast_token(null_tokens.e3, cond_h / 8, cond_w / 8);
    return f;
}

MultiScaleFeatures condition_dropout(const MultiScaleFeatures& features,
                                     const NullTokens& null_tokens, double rate, Rng& rng) {
    if (!sample_condition_dropout(rate, rng)) return features;
    return null_condition(null_tokens, features.y1.dim(0) * 2, features.y1.dim(1) * 2);
}

}  // namespace trifield
