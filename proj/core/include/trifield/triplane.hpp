// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trifield/rng.hpp"
#include "trifield/tensor.hpp"

namespace trifield {

// Three axis-aligned feature planes covering [-extent, extent]^2 each.
// Plane order is uv, wu, vw; a plane tensor is [H, W, C] with rows indexed
// by the first named coordinate (uv rows follow u, wu rows follow w, ...).
struct Triplane {
    int res = 0;       // H == W
    int channels = 0;  // C
    double extent = 1.0;
    std::array<Tensor, 3> planes;

    Triplane() = default;
    Triplane(int res_, int channels_, double extent_ = 1.0);

    int feature_dim() const { return 3 * channels; }
};

// Gradient accumulation buffer matching a triplane's plane shapes.
struct TriplaneGrads {
    std::array<Tensor, 3> planes;

    explicit TriplaneGrads(const Triplane& tp);
    void clear();
};

struct SpectrumReport {
    // (spatial frequency in cycles/sample, mean log10 power), sorted by frequency
    std::vector<std::pair<double, double>> radial_bins;
    double high_freq_energy_ratio = 0.0;  // power above half-Nyquist / total
    double total_power = 0.0;             // sum |F|^2 over all planes/channels
};

void init_gaussian(Triplane& tp, Rng& rng, double stddev = 0.1);

// Bilinear lookup of all three planes at world point p, concatenated to 3C.
// Points outside [-extent, extent]^3 clamp to the border sample.
void sample(const Triplane& tp, const double p[3], std::span<double> out);
std::vector<double> sample(const Triplane& tp, const double p[3]);

// Exact gradient of `sample`. Scatters d(out)/d(plane entries) into `acc`
// (at most 4 texels per plane) and, when grad_p != nullptr, adds the
// gradient with respect to the point itself.
void sample_backward(const Triplane& tp, const double p[3], std::span<const double> upstream,
                     TriplaneGrads& acc, double* grad_p = nullptr);

// hstack(uv, wu, vw) -> [H, 3W, C], and its exact inverse.
Tensor rollout(const Triplane& tp);
Triplane unrollout(const Tensor& rolled, double extent);

SpectrumReport spectrum(const Triplane& tp);

// Strict invariants enforced at pipeline/file boundaries: H == W, power of
// two >= 8, finite entries. In-memory construction stays permissive so tiny
// test instances are representable.
void validate_strict(const Triplane& tp);

// Binary format: magic "TPLN", version u32, H u32, W u32, C u32, extent f64,
// then 3*H*W*C little-endian f32 in plane-major, row-major, channel-last order.
void save_triplane(const Triplane& tp, const std::string& path);
Triplane load_triplane(const std::string& path);

}  // namespace trifield
