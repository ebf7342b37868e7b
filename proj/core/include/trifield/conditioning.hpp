// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "trifield/ad.hpp"
#include "trifield/params.hpp"
#include "trifield/rng.hpp"
#include "trifield/tensor.hpp"

namespace trifield {

// Multi-scale portrait features: three strided conv stages emitting
// y1 [H/2, W/2, C_f], y2 [H/4, W/4, 2C_f], y3 [H/8, W/8, 4C_f].
struct MultiScaleFeatures {
    Tensor y1, y2, y3;
};

struct EncoderConfig {
    int in_channels = 3;
    int base_channels = 8;  // C_f
};

// Parameter entry indices of the encoder inside a ParamStore.
struct EncoderHandles {
    EncoderConfig cfg;
    int w1, b1, w2, b2, w3, b3;
};

EncoderHandles add_encoder_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng);

struct MultiScaleVars {
    ad::Var y1, y2, y3;
};

// Tape-side forward (trained jointly with the base model). Instrumented
// with a call counter so the unconditional path can be asserted untouched.
MultiScaleVars encode(ad::Tape& tape, ad::Var image, const BoundParams& params,
                      const EncoderHandles& h);

// Convenience on plain tensors (builds a throwaway tape).
MultiScaleFeatures encode_values(const Tensor& image, const ParamStore& store,
                                 const EncoderHandles& h);

int64_t encoder_call_count();
void reset_encoder_call_count();

// Non-overlapping P x P patches in row-major order; tokens are the map
// texels ordered patch-by-patch, each token the texel's channel vector.
struct PatchSet {
    int rows = 0, cols = 0, channels = 0;
    int patch_size = 0;
    int k_patches = 0;                // (rows/P) * (cols/P)
    std::vector<int> token_order;     // token t holds map texel token_order[t]
    Tensor tokens;                    // [rows*cols, C] in patch order
};

std::vector<int> patch_order_indices(int rows, int cols, int patch_size);
PatchSet patch_partition(const Tensor& feature_map, int patch_size);
Tensor patch_unpartition(const PatchSet& patches);  // exact inverse

// Cross-attention with residual connection: queries from x tokens, keys and
// values from condition tokens; a sinusoidal embedding of each token's
// patch-order position is added to the condition tokens unless masked.
// Shapes: x [N, Cx], kv [M, Ck], wq/wk/wv [A, *], wo [Cx, A].
ad::Var cross_attend(ad::Tape& tape, ad::Var x_tokens, ad::Var kv_tokens, ad::Var wq, ad::Var wk,
                     ad::Var wv, ad::Var wo, bool positional = true);

Tensor cross_attend_values(const Tensor& x_tokens, const Tensor& kv_tokens, const Tensor& wq,
                           const Tensor& wk, const Tensor& wv, const Tensor& wo,
                           bool positional = true);

Tensor sinusoidal_positions(int count, int dims);  // token positional table

// Learned null embeddings, one per scale; broadcast to the scale's geometry
// when a sample's condition is dropped.
struct NullTokens {
    Tensor e1, e2, e3;  // [C_f], [2C_f], [4C_f]
};

// Whole-sample condition dropout at the given rate.
bool sample_condition_dropout(double rate, Rng& rng);
MultiScaleFeatures null_condition(const NullTokens& null_tokens, int cond_h, int cond_w);
MultiScaleFeatures condition_dropout(const MultiScaleFeatures& features,
                                     const NullTokens& null_tokens, double rate, Rng& rng);

}  // namespace trifield
