// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "trifield/rng.hpp"
#include "trifield/tensor.hpp"

namespace trifield {

// Identity activation exists for linear-map gradient tests only.
enum class Activation { gelu, identity };

struct DecoderConfig {
    int feat_dim = 24;  // 3C triplane feature
    int hidden = 64;
    int depth = 3;  // hidden layers
    Activation act = Activation::gelu;

    bool operator==(const DecoderConfig&) const = default;
};

// Shared MLP mapping a sampled triplane feature to (density, rgb).
// Flat layout is layer-major: per layer all weights row-major, then bias.
struct DecoderParams {
    DecoderConfig cfg;
    std::vector<Tensor> weights;  // [out, in]
    std::vector<Tensor> biases;   // [out]

    int64_t param_count() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);
};

struct DecoderOutput {
    double sigma = 0.0;            // density, >= 0
    std::array<double, 3> rgb{};   // each in [0,1]
};

struct DecoderOutputGrad {
    double d_sigma = 0.0;
    std::array<double, 3> d_rgb{};
};

// Fan-in scaled Gaussian init; the final density bias starts at -2.5 so a
// freshly initialized field renders close to the background.
DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng);

DecoderOutput decode(const DecoderParams& params, std::span<const double> feat);

// Exact reverse-mode gradient. Accumulates into grad_params (flat layout,
// may be empty to skip) and grad_feat (may be empty to skip).
void decode_backward(const DecoderParams& params, std::span<const double> feat,
                     const DecoderOutputGrad& upstream, std::span<double> grad_params,
                     std::span<double> grad_feat);

// Reusable scratch for the ray-marching hot loop; the _ws entry points skip
// per-call allocation and input validation.
struct DecoderWorkspace {
    std::vector<std::vector<double>> inputs, preact;
    std::vector<double> dz, dnext;
};
DecoderOutput decode_ws(const DecoderParams& params, std::span<const double> feat,
                        DecoderWorkspace& ws);
void decode_backward_ws(const DecoderParams& params, std::span<const double> feat,
                        const DecoderOutputGrad& upstream, std::span<double> grad_params,
                        std::span<double> grad_feat, DecoderWorkspace& ws);

// Checkpoint: magic "DEC0", layer sizes, then flat f64 parameters.
void save_decoder(const DecoderParams& params, const std::string& path);
DecoderParams load_decoder(const std::string& path);

}  // namespace trifield
