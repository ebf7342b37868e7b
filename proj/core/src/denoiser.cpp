// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace trifield {

using ad::Tape;
using ad::Var;

Tensor sinusoidal_embedding(double t, int dims, double scale) {
    Tensor emb({1, dims});
    for (int d = 0; d < dims; ++d) {
        const double rate = std::pow(10000.0, -2.0 * (d / 2) / std::max(1, dims));
        emb.at(0, d) = (d % 2 == 0) ? std::sin(scale * t * rate) : std::cos(scale * t * rate);
    }
    return emb;
}

namespace {

std::string stage_name(const char* half, int s, const char* leaf) {
    return std::string(half) + std::to_string(s) + "." + leaf;
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.channel_mult.empty()) throw std::invalid_argument("denoiser: empty channel_mult");
    if (static_cast<int>(cfg.cross_attn_scale.size()) != cfg.stages())
        throw std::invalid_argument("denoiser: cross_attn_scale size must match stages");
    if (cfg.plane_height != cfg.plane_width)
        throw std::invalid_argument("denoiser: planes must be square");
    const int T4 = 4 * cfg.time_embed_dim;
    auto& P = params_;

    time_w1_ = P.add("time.w1", fanin_linear_init(T4, cfg.time_embed_dim, rng));
    time_b1_ = P.add("time.b1", Tensor({T4}));
    time_w2_ = P.add("time.w2", fanin_linear_init(T4, T4, rng));
    time_b2_ = P.add("time.b2", Tensor({T4}));

    auto channels = [&](int s) { return cfg.model_channels * cfg.channel_mult[static_cast<size_t>(s)]; };

    stem_w_ = P.add("stem.w", fanin_conv_init(channels(0), cfg.in_channels, 3, rng));
    stem_b_ = P.add("stem.b", Tensor({channels(0)}));

    auto ones = [](int c) { return Tensor({c}, std::vector<double>(static_cast<size_t>(c), 1.0)); };

    auto add_resblock = [&](const std::string& base, int cin, int cout) {
        ResBlockHandles h;
        h.gn1_g = P.add(base + ".gn1.g", ones(cin));
        h.gn1_b = P.add(base + ".gn1.b", Tensor({cin}));
        h.conv1_w = P.add(base + ".conv1.w", fanin_conv_init(cout, cin, 3, rng));
        h.conv1_b = P.add(base + ".conv1.b", Tensor({cout}));
        h.emb_w = P.add(base + ".emb.w", fanin_linear_init(2 * cout, T4, rng));
        h.emb_b = P.add(base + ".emb.b", Tensor({2 * cout}));
        h.gn2_g = P.add(base + ".gn2.g", ones(cout));
        h.gn2_b = P.add(base + ".gn2.b", Tensor({cout}));
        h.conv2_w = P.add(base + ".conv2.w", Tensor({cout, cout, 3, 3}));  // zero init
        h.conv2_b = P.add(base + ".conv2.b", Tensor({cout}));
        if (cin != cout) {
            h.skip_w = P.add(base + ".skip.w", fanin_conv_init(cout, cin, 1, rng));
            h.skip_b = P.add(base + ".skip.b", Tensor({cout}));
        }
        return h;
    };
    auto add_attn = [&](const std::string& base, int c, int kv_width) {
        AttnHandles h;
        h.gn_g = P.add(base + ".gn.g", ones(c));
        h.gn_b = P.add(base + ".gn.b", Tensor({c}));
        h.wq = P.add(base + ".wq", fanin_linear_init(cfg.attn_width, c, rng));
        h.wk = P.add(base + ".wk", fanin_linear_init(cfg.attn_width, kv_width, rng));
        h.wv = P.add(base + ".wv", fanin_linear_init(cfg.attn_width, kv_width, rng));
        h.wo = P.add(base + ".wo", Tensor({c, cfg.attn_width}));  // zero init
        return h;
    };
    auto add_exchange = [&](const std::string& base, int c) {
        ExchangeHandles h;
        h.w = P.add(base + ".w", Tensor({c, 3 * c, 1, 1}));  // zero init
        h.b = P.add(base + ".b", Tensor({c}));
        return h;
    };

    int prev = channels(0);
    for (int s = 0; s < cfg.stages(); ++s) {
        StageHandles st;
        const int c = channels(s);
        for (int b = 0; b < cfg.res_blocks; ++b)
            st.blocks.push_back(add_resblock(stage_name("down", s, "block") + std::to_string(b),
                                             b == 0 ? prev : c, c));
        if (cfg.exchange_layers) st.exchange = add_exchange(stage_name("down", s, "exchange"), c);
        const int scale = cfg.cross_attn_scale[static_cast<size_t>(s)];
        if (scale >= 0) {
            st.has_cross = true;
            st.cross = add_attn(stage_name("down", s, "cross"), c, cfg.cond_width(scale));
        }
        if (s + 1 < cfg.stages()) {
            st.down_w = P.add(stage_name("down", s, "down.w"), fanin_conv_init(c, c, 3, rng));
            st.down_b = P.add(stage_name("down", s, "down.b"), Tensor({c}));
        }
        down_.push_back(std::move(st));
        prev = c;
    }

    const int cb = channels(cfg.stages() - 1);
    mid1_ = add_resblock("mid.block0", cb, cb);
    if (cfg.bottleneck_self_attention) mid_attn_ = add_attn("mid.self", cb, cb);
    if (cfg.bottleneck_cross_scale >= 0)
        mid_cross_ = add_attn("mid.cross", cb, cfg.cond_width(cfg.bottleneck_cross_scale));
    mid2_ = add_resblock("mid.block1", cb, cb);

    for (int s = cfg.stages() - 1; s >= 0; --s) {
        StageHandles st;
        const int c = channels(s);
        const int cin_first = c + c;  // incoming features + skip, both at c channels
        for (int b = 0; b < cfg.res_blocks; ++b)
            st.blocks.push_back(add_resblock(stage_name("up", s, "block") + std::to_string(b),
                                             b == 0 ? cin_first : c, c));
        if (cfg.exchange_layers) st.exchange = add_exchange(stage_name("up", s, "exchange"), c);
        const int scale = cfg.cross_attn_scale[static_cast<size_t>(s)];
        if (scale >= 0) {
            st.has_cross = true;
            st.cross = add_attn(stage_name("up", s, "cross"), c, cfg.cond_width(scale));
        }
        if (s > 0) {
            st.up_w = P.add(stage_name("up", s, "up.w"), fanin_conv_init(channels(s - 1), c, 3, rng));
            st.up_b = P.add(stage_name("up", s, "up.b"), Tensor({channels(s - 1)}));
        }
        up_.push_back(std::move(st));
    }

    head_gn_g_ = P.add("head.gn.g", ones(channels(0)));
    head_gn_b_ = P.add("head.gn.b", Tensor({channels(0)}));
    head_w_ = P.add("head.w", Tensor({cfg.out_channels, channels(0), 3, 3}));  // zero init
    head_b_ = P.add("head.b", Tensor({cfg.out_channels}));
}

Var Denoiser::res_block(Tape& tape, Var x, Var emb, const ResBlockHandles& h,
                        const BoundParams& bp) const {
    Var hidden = tape.group_norm(x, cfg_.groups, bp[h.gn1_g], bp[h.gn1_b]);
    hidden = tape.silu(hidden);
    hidden = tape.conv2d(hidden, bp[h.conv1_w], bp[h.conv1_b], 1);

    const int cout = tape.value(bp[h.conv1_b]).dim(0);
    Var ss = tape.linear(emb, bp[h.emb_w], bp[h.emb_b]);  // [1, 2C]
    ss = tape.reshape(ss, {2 * cout});
    Var sc = tape.slice_last(ss, 0, cout);
    Var sh = tape.slice_last(ss, cout, 2 * cout);

    hidden = tape.group_norm(hidden, cfg_.groups, bp[h.gn2_g], bp[h.gn2_b]);
    hidden = tape.mul_channel(hidden, tape.add_scalar(sc, 1.0));
    hidden = tape.add_channel(hidden, sh);
    hidden = tape.silu(hidden);
    hidden = tape.conv2d(hidden, bp[h.conv2_w], bp[h.conv2_b], 1);

    Var skip = x;
    if (h.skip_w >= 0) skip = tape.conv2d(x, bp[h.skip_w], bp[h.skip_b], 1);
    return tape.add(skip, hidden);
}

Var Denoiser::exchange(Tape& tape, Var x, const ExchangeHandles& h, const BoundParams& bp) const {
    const int H = tape.value(x).dim(0);
    const int W3 = tape.value(x).dim(1);
    const int C = tape.value(x).dim(2);
    const int W = W3 / 3;
    if (W * 3 != W3 || H != W) throw std::invalid_argument("exchange: expected square rolled planes");

    Var uv = tape.slice_cols(x, 0, W);
    Var wu = tape.slice_cols(x, W, 2 * W);
    Var vw = tape.slice_cols(x, 2 * W, 3 * W);

    // pooled axis vectors; plane rows/cols follow (u,v), (w,u), (v,w)
    auto as_rows = [&](Var v1wc) { return tape.reshape(v1wc, {W, 1, C}); };
    auto as_cols = [&](Var vh1c) { return tape.reshape(vh1c, {1, H, C}); };

    Var u_from_wu = tape.broadcast_cols(as_rows(tape.mean_rows(wu)), W);   // varies along rows=u
    Var v_from_vw = tape.broadcast_rows(as_cols(tape.mean_cols(vw)), H);   // varies along cols=v
    Var w_from_vw = tape.broadcast_cols(as_rows(tape.mean_rows(vw)), W);   // varies along rows=w
    Var u_from_uv = tape.broadcast_rows(as_cols(tape.mean_cols(uv)), H);   // varies along cols=u
    Var v_from_uv = tape.broadcast_cols(as_rows(tape.mean_rows(uv)), W);   // varies along rows=v
    Var w_from_wu = tape.broadcast_rows(as_cols(tape.mean_cols(wu)), H);   // varies along cols=w

    auto mix = [&](Var plane, Var a, Var b) {
        Var cat = tape.concat_last(tape.concat_last(plane, a), b);
        return tape.add(plane, tape.conv2d(cat, bp[h.w], bp[h.b], 1));
    };
    Var uv2 = mix(uv, u_from_wu, v_from_vw);
    Var wu2 = mix(wu, w_from_vw, u_from_uv);
    Var vw2 = mix(vw, v_from_uv, w_from_wu);
    return tape.concat_cols(tape.concat_cols(uv2, wu2), vw2);
}

Var Denoiser::self_attention(Tape& tape, Var x, const AttnHandles& h,
                             const BoundParams& bp) const {
    const int H = tape.value(x).dim(0), W = tape.value(x).dim(1), C = tape.value(x).dim(2);
    Var normed = tape.group_norm(x, cfg_.groups, bp[h.gn_g], bp[h.gn_b]);
    Var tokens = tape.reshape(normed, {H * W, C});
    Var attended = cross_attend(tape, tokens, tokens, bp[h.wq], bp[h.wk], bp[h.wv], bp[h.wo],
                                /*positional=*/false);
    Var delta = tape.sub(attended, tokens);
    return tape.add(x, tape.reshape(delta, {H, W, C}));
}

Var Denoiser::cross_attention(Tape& tape, Var x, Var cond_map, const AttnHandles& h,
                              const BoundParams& bp) const {
    const int H = tape.value(x).dim(0), W = tape.value(x).dim(1), C = tape.value(x).dim(2);
    const int ch = tape.value(cond_map).dim(0);
    const int cw = tape.value(cond_map).dim(1);
    const int cc = tape.value(cond_map).dim(2);
    int P = cfg_.cond_patch_size;
    while (P > 1 && (ch % P != 0 || cw % P != 0)) P /= 2;

    Var normed = tape.group_norm(x, cfg_.groups, bp[h.gn_g], bp[h.gn_b]);
    Var tokens = tape.reshape(normed, {H * W, C});
    Var kv = tape.reshape(cond_map, {ch * cw, cc});
    kv = tape.gather_rows(kv, patch_order_indices(ch, cw, P));
    Var attended = cross_attend(tape, tokens, kv, bp[h.wq], bp[h.wk], bp[h.wv], bp[h.wo],
                                /*positional=*/true);
    Var delta = tape.sub(attended, tokens);
    return tape.add(x, tape.reshape(delta, {H, W, C}));
}

Var Denoiser::pick_scale(const DenoiserCondition& cond, int scale) const {
    switch (scale) {
        case 0: return cond.y1;
        case 1: return cond.y2;
        case 2: return cond.y3;
        default: throw std::invalid_argument("denoiser: bad condition scale");
    }
}

Var Denoiser::forward(Tape& tape, Var x, double t, double aug_level,
                      const DenoiserCondition& cond, const BoundParams& bp) const {
    const Tensor& tx = tape.value(x);
    if (tx.rank() != 3 || tx.dim(2) != cfg_.in_channels)
        throw std::invalid_argument("denoiser: input must be [H, 3W, in_channels]");
    if (tx.dim(0) != cfg_.plane_height || tx.dim(1) != 3 * cfg_.plane_width)
        throw std::invalid_argument("denoiser: input resolution mismatch");

    bool needs_cond = cfg_.bottleneck_cross_scale >= 0;
    for (int s : cfg_.cross_attn_scale) needs_cond = needs_cond || s >= 0;
    if (needs_cond && !cond.present())
        throw std::invalid_argument("denoiser: conditioning required but absent");

    // joint time/augmentation embedding through a small MLP
    Tensor emb_in = sinusoidal_embedding(t, cfg_.time_embed_dim);
    {
        const Tensor aug = sinusoidal_embedding(aug_level, cfg_.time_embed_dim);
        for (int64_t i = 0; i < emb_in.numel(); ++i) emb_in[i] += aug[i];
    }
    Var emb = tape.constant(emb_in);
    emb = tape.linear(emb, bp[time_w1_], bp[time_b1_]);
    emb = tape.silu(emb);
    emb = tape.linear(emb, bp[time_w2_], bp[time_b2_]);

    Var h = tape.conv2d(x, bp[stem_w_], bp[stem_b_], 1);

    std::vector<Var> skips;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const auto& st = down_[static_cast<size_t>(s)];
        for (const auto& blk : st.blocks) h = res_block(tape, h, emb, blk, bp);
        if (cfg_.exchange_layers) h = exchange(tape, h, st.exchange, bp);
        if (st.has_cross)
            h = cross_attention(tape, h, pick_scale(cond, cfg_.cross_attn_scale[static_cast<size_t>(s)]),
                                st.cross, bp);
        skips.push_back(h);
        if (st.down_w >= 0) h = tape.conv2d(h, bp[st.down_w], bp[st.down_b], 2);
    }

    h = res_block(tape, h, emb, mid1_, bp);
    if (cfg_.bottleneck_self_attention) h = self_attention(tape, h, mid_attn_, bp);
    if (cfg_.bottleneck_cross_scale >= 0)
        h = cross_attention(tape, h, pick_scale(cond, cfg_.bottleneck_cross_scale), mid_cross_, bp);
    h = res_block(tape, h, emb, mid2_, bp);

    for (size_t i = 0; i < up_.size(); ++i) {
        const int s = cfg_.stages() - 1 - static_cast<int>(i);
        const auto& st = up_[i];
        h = tape.concat_last(h, skips[static_cast<size_t>(s)]);
        for (const auto& blk : st.blocks) h = res_block(tape, h, emb, blk, bp);
        if (cfg_.exchange_layers) h = exchange(tape, h, st.exchange, bp);
        if (st.has_cross)
            h = cross_attention(tape, h, pick_scale(cond, cfg_.cross_attn_scale[static_cast<size_t>(s)]),
                                st.cross, bp);
        if (st.up_w >= 0) {
            h = tape.upsample_nearest2(h);
            h = tape.conv2d(h, bp[st.up_w], bp[st.up_b], 1);
        }
    }

    h = tape.group_norm(h, cfg_.groups, bp[head_gn_g_], bp[head_gn_b_]);
    h = tape.silu(h);
    return tape.conv2d(h, bp[head_w_], bp[head_b_], 1);
}

}  // namespace trifield
