// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "trifield/decoder.hpp"
#include "trifield/rng.hpp"
#include "trifield/tensor.hpp"
#include "trifield/triplane.hpp"

namespace trifield {

using Vec3 = std::array<double, 3>;
using Rgba = std::array<double, 4>;

struct CameraConfig {
    Vec3 position{};
    Vec3 look_at{};
    Vec3 up{0.0, 0.0, 1.0};
    double fov_y = 1.1;  // radians
    int width = 64, height = 64;
};

struct RayBatch {
    std::vector<Vec3> origins;
    std::vector<Vec3> directions;  // unit norm
    std::vector<std::array<int, 2>> pixels;  // (x, y)
    std::vector<Rgba> target_rgba;           // optional training targets

    int count() const { return static_cast<int>(origins.size()); }
};

RayBatch generate_rays(const CameraConfig& cam, std::span<const std::array<int, 2>> pixels);
RayBatch generate_rays_full(const CameraConfig& cam);  // row-major over all pixels

// Coarse voxel cache of field density over [-extent, extent]^3. Cells store
// an EMA of sampled densities; a cell is occupied while its EMA exceeds
// tau_occ. Zero initialization marks everything empty.
struct OccupancyGrid {
    int res = 32;  // G
    double extent = 1.0;
    double tau_occ = 1e-3;
    double ema_decay = 0.95;
    std::vector<double> density;  // G^3, EMA
    std::vector<uint8_t> flags;   // density > tau_occ

    OccupancyGrid() = default;
    OccupancyGrid(int res_, double extent_, double tau = 1e-3, double decay = 0.95);

    int64_t occupied_count() const;
    bool occupied_at(const double p[3]) const;
};

using FieldFn = std::function<void(const double p[3], double& sigma, double rgb[3])>;

// One jittered density probe per cell; density EMA is max(old*decay, probe).
void update_occupancy(const Triplane& tp, const DecoderParams& params, OccupancyGrid& grid,
                      Rng& rng);
void update_occupancy_field(const FieldFn& field, OccupancyGrid& grid, Rng& rng);

struct RenderSettings {
    int n_samples = 64;
    double near = 0.1, far = 4.0;  // multiples of the triplane extent
    Vec3 background{1.0, 1.0, 1.0};
    bool jitter = false;  // stratified jitter when true, stratum midpoints when false
};

// Per-sample records kept for the backward pass.
struct RenderCache {
    struct Sample {
        Vec3 pos;
        double sigma, alpha, trans;  // trans = transmittance entering the sample
        std::array<double, 3> rgb;
    };
    std::vector<std::vector<Sample>> per_ray;
    std::vector<double> final_trans;
    RenderSettings settings;
    double delta = 0.0;  // constant stratum width
    uint64_t fingerprint = 0;  // of (triplane, params) at forward time
};

struct RenderResult {
    std::vector<Rgba> rgba;
    std::unique_ptr<RenderCache> cache;
};

// Stratified volumetric rendering with alpha compositing over the settings
// background; output alpha is 1 - T_final. Pass grid = nullptr to disable
// empty-space skipping, keep_cache = false to drop backward records.
RenderResult render_rays(const Triplane& tp, const DecoderParams& params, const RayBatch& rays,
                         const OccupancyGrid* grid, const RenderSettings& settings,
                         Rng* jitter_rng = nullptr, bool keep_cache = true);

// Same sampling/compositing against an arbitrary field (scene-gen oracle
// path and decoder-bypass tests).
std::vector<Rgba> render_rays_field(const FieldFn& field, const RayBatch& rays, double extent,
                                    const OccupancyGrid* grid, const RenderSettings& settings,
                                    Rng* jitter_rng = nullptr);

// Exact reverse-mode gradients through compositing, decoder, and triplane
// sampling. The cache must come from a matching forward pass.
void render_backward(const RenderCache& cache, const Triplane& tp, const DecoderParams& params,
                     std::span<const Rgba> upstream, TriplaneGrads& grad_tp,
                     std::span<double> grad_params);

// Mean squared error over RGBA; gradient is 2 (pred - target) / N.
double render_loss(std::span<const Rgba> pred, std::span<const Rgba> target,
                   std::span<Rgba> grad_pred);

// Renders a full camera view to an [H, W, 4] image.
Tensor render_view(const Triplane& tp, const DecoderParams& params, const CameraConfig& cam,
                   const OccupancyGrid* grid, const RenderSettings& settings);

uint64_t field_fingerprint(const Triplane& tp, const DecoderParams& params);

}  // namespace trifield
