// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "trifield/ad.hpp"
#include "trifield/conditioning.hpp"
#include "trifield/params.hpp"
#include "trifield/rng.hpp"

namespace trifield {

// U-Net over a rolled-out triplane [H, 3W, C]. Stages halve the spatial
// dims; cross-plane communication is an axis-pooled exchange layer per
// stage; conditioning enters via cross-attention at configured stages
// and/or the bottleneck.
struct DenoiserConfig {
    int plane_height = 16;  // H of one plane (rolled width is 3 * plane_width)
    int plane_width = 16;
    int in_channels = 8;
    int out_channels = 8;   // 2x in_channels when learned_variance
    int model_channels = 32;
    std::vector<int> channel_mult = {1, 2, 4};
    int res_blocks = 2;
    int groups = 8;
    int time_embed_dim = 32;  // sinusoidal width; the MLP expands it 4x
    int attn_width = 32;
    bool bottleneck_self_attention = true;
    bool learned_variance = false;
    bool exchange_layers = true;
    // per-stage condition scale for cross-attention: 0 = y1, 1 = y2, 2 = y3,
    // -1 = none; applied in both the down and up halves.
    std::vector<int> cross_attn_scale = {-1, -1, -1};
    int bottleneck_cross_scale = -1;
    int cond_patch_size = 4;
    int cond_base_channels = 8;  // C_f of the condition encoder

    int stages() const { return static_cast<int>(channel_mult.size()); }
    int cond_width(int scale) const { return cond_base_channels << scale; }
};

struct ResBlockHandles {
    int gn1_g, gn1_b, conv1_w, conv1_b;
    int emb_w, emb_b;  // time embedding -> scale/shift (2C)
    int gn2_g, gn2_b, conv2_w, conv2_b;
    int skip_w = -1, skip_b = -1;
};

struct AttnHandles {
    int gn_g, gn_b, wq, wk, wv, wo;
};

struct ExchangeHandles {
    int w, b;
};

struct StageHandles {
    std::vector<ResBlockHandles> blocks;
    ExchangeHandles exchange{};
    AttnHandles cross{};
    bool has_cross = false;
    int down_w = -1, down_b = -1;  // stride-2 conv to the next stage
    int up_w = -1, up_b = -1;      // conv after nearest-2x upsample
};

// Condition features already on the tape (or invalid Vars when absent).
struct DenoiserCondition {
    ad::Var y1, y2, y3;
    bool present() const { return y1.valid(); }
};

class Denoiser {
public:
    Denoiser() = default;
    Denoiser(const DenoiserConfig& cfg, Rng& rng);

    // x is [H, 3W, in_channels]; t and aug_level are embedded jointly.
    ad::Var forward(ad::Tape& tape, ad::Var x, double t, double aug_level,
                    const DenoiserCondition& cond, const BoundParams& bp) const;

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    ad::Var res_block(ad::Tape& tape, ad::Var x, ad::Var emb, const ResBlockHandles& h,
                      const BoundParams& bp) const;
    ad::Var exchange(ad::Tape& tape, ad::Var x, const ExchangeHandles& h,
                     const BoundParams& bp) const;
    ad::Var self_attention(ad::Tape& tape, ad::Var x, const AttnHandles& h,
                           const BoundParams& bp) const;
    ad::Var cross_attention(ad::Tape& tape, ad::Var x, ad::Var cond_map, const AttnHandles& h,
                            const BoundParams& bp) const;
    ad::Var pick_scale(const DenoiserCondition& cond, int scale) const;

    DenoiserConfig cfg_;
    ParamStore params_;
    int stem_w_ = -1, stem_b_ = -1;
    std::vector<StageHandles> down_, up_;
    ResBlockHandles mid1_{}, mid2_{};
    AttnHandles mid_attn_{};
    AttnHandles mid_cross_{};
    int time_w1_ = -1, time_b1_ = -1, time_w2_ = -1, time_b2_ = -1;
    int head_gn_g_ = -1, head_gn_b_ = -1, head_w_ = -1, head_b_ = -1;
};

Tensor sinusoidal_embedding(double t, int dims, double scale = 1000.0);

}  // namespace trifield
