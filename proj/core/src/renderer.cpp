// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/renderer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace trifield {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }
Vec3 normalize(const Vec3& a) {
    const double n = norm(a);
    return {a[0] / n, a[1] / n, a[2] / n};
}

struct CameraFrame {
    Vec3 fwd, right, up;
    double tan_half, aspect;
};

CameraFrame camera_frame(const CameraConfig& cam) {
    if (!(cam.fov_y > 0.0 && cam.fov_y < M_PI))
        throw std::invalid_argument("camera: fov_y outside (0, pi)");
    if (cam.width < 1 || cam.height < 1)
        throw std::invalid_argument("camera: non-positive image size");
    const Vec3 view = sub(cam.look_at, cam.position);
    if (norm(view) == 0.0) throw std::invalid_argument("camera: position equals look_at");
    if (norm(cross(cam.up, view)) < 1e-12)
        throw std::invalid_argument("camera: up parallel to view axis");
    CameraFrame f;
    f.fwd = normalize(view);
    f.right = normalize(cross(f.fwd, cam.up));
    f.up = cross(f.right, f.fwd);
    f.tan_half = std::tan(cam.fov_y / 2.0);
    f.aspect = static_cast<double>(cam.width) / cam.height;
    return f;
}

}  // namespace

RayBatch generate_rays(const CameraConfig& cam, std::span<const std::array<int, 2>> pixels) {
    const CameraFrame f = camera_frame(cam);
    RayBatch batch;
    batch.origins.reserve(pixels.size());
    batch.directions.reserve(pixels.size());
    batch.pixels.assign(pixels.begin(), pixels.end());
    for (const auto& px : pixels) {
        if (px[0] < 0 || px[0] >= cam.width || px[1] < 0 || px[1] >= cam.height)
            throw std::invalid_argument("generate_rays: pixel outside image bounds");
        const double ndc_x = (px[0] + 0.5) / cam.width * 2.0 - 1.0;
        const double ndc_y = 1.0 - (px[1] + 0.5) / cam.height * 2.0;
        Vec3 d;
        for (int a = 0; a < 3; ++a)
            d[a] = f.fwd[a] + ndc_x * f.tan_half * f.aspect * f.right[a] +
                   ndc_y * f.tan_half * f.up[a];
        batch.origins.push_back(cam.position);
        batch.directions.push_back(normalize(d));
    }
    return batch;
}

RayBatch generate_rays_full(const CameraConfig& cam) {
    std::vector<std::array<int, 2>> pixels;
    pixels.reserve(static_cast<size_t>(cam.width) * cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) pixels.push_back({x, y});
    return generate_rays(cam, pixels);
}

OccupancyGrid::OccupancyGrid(int res_, double extent_, double tau, double decay)
    : res(res_), extent(extent_), tau_occ(tau), ema_decay(decay) {
    if (res < 1) throw std::invalid_argument("occupancy grid: res must be >= 1");
    density.assign(static_cast<size_t>(res) * res * res, 0.0);
    flags.assign(density.size(), 0);
}

int64_t OccupancyGrid::occupied_count() const {
    int64_t n = 0;
    for (uint8_t f : flags) n += f;
    return n;
}

bool OccupancyGrid::occupied_at(const double p[3]) const {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        const double q = (p[a] + extent) / (2.0 * extent) * res;
        if (q < 0.0 || q >= res) return false;  // outside the grid is empty
        idx[a] = static_cast<int>(q);
    }
    return flags[(static_cast<size_t>(idx[0]) * res + idx[1]) * res + idx[2]] != 0;
}

namespace {

template <typename Probe>
void update_occupancy_impl(OccupancyGrid& grid, Rng& rng, Probe&& probe) {
    const int G = grid.res;
    const double cell = 2.0 * grid.extent / G;
    size_t i = 0;
    for (int a = 0; a < G; ++a)
        for (int b = 0; b < G; ++b)
            for (int c = 0; c < G; ++c, ++i) {
                double p[3] = {-grid.extent + (a + rng.uniform()) * cell,
                               -grid.extent + (b + rng.uniform()) * cell,
                               -grid.extent + (c + rng.uniform()) * cell};
                const double sigma = probe(p);
                grid.density[i] = std::max(grid.density[i] * grid.ema_decay, sigma);
                grid.flags[i] = grid.density[i] > grid.tau_occ ? 1 : 0;
            }
}

}  // namespace

void update_occupancy(const Triplane& tp, const DecoderParams& params, OccupancyGrid& grid,
                      Rng& rng) {
    DecoderWorkspace ws;
    std::vector<double> feat(static_cast<size_t>(tp.feature_dim()));
    update_occupancy_impl(grid, rng, [&](const double p[3]) {
        sample(tp, p, feat);
        return decode_ws(params, feat, ws).sigma;
    });
}

void update_occupancy_field(const FieldFn& field, OccupancyGrid& grid, Rng& rng) {
    update_occupancy_impl(grid, rng, [&](const double p[3]) {
        double sigma, rgb[3];
        field(p, sigma, rgb);
        return sigma;
    });
}

uint64_t field_fingerprint(const Triplane& tp, const DecoderParams& params) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](double x) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        h ^= bits;
        h *= 1099511628211ull;
    };
    mix(static_cast<double>(tp.res));
    mix(static_cast<double>(tp.channels));
    mix(tp.extent);
    for (const auto& pl : tp.planes) {
        const int64_t n = pl.numel();
        const int64_t stride = std::max<int64_t>(1, n / 64);
        double s = 0.0;
        for (int64_t i = 0; i < n; i += stride) s += pl[i];
        mix(s);
        if (n) mix(pl[n - 1]);
    }
    mix(static_cast<double>(params.param_count()));
    for (size_t l = 0; l < params.weights.size(); ++l) {
        double s = 0.0;
        for (double x : params.weights[l].v) s += x;
        for (double x : params.biases[l].v) s += x;
        mix(s);
    }
    return h;
}

namespace {

constexpr double kMinTrans = 1e-10;  // early-out transmittance

// Field support is the triplane volume; samples outside contribute nothing.
inline bool inside_cube(const double p[3], double extent) {
    return std::abs(p[0]) <= extent && std::abs(p[1]) <= extent && std::abs(p[2]) <= extent;
}

struct Marcher {
    double t_near, t_far, delta;
    int n_samples;

    Marcher(const RenderSettings& settings, double extent) {
        if (settings.n_samples < 2)
            throw std::invalid_argument("render: n_samples must be >= 2");
        t_near = settings.near * extent;
        t_far = settings.far * extent;
        if (t_near >= t_far) throw std::invalid_argument("render: near >= far");
        n_samples = settings.n_samples;
        delta = (t_far - t_near) / n_samples;
    }

    double t_of(int i, double jitter_frac) const { return t_near + (i + jitter_frac) * delta; }
};

}  // namespace

RenderResult render_rays(const Triplane& tp, const DecoderParams& params, const RayBatch& rays,
                         const OccupancyGrid* grid, const RenderSettings& settings,
                         Rng* jitter_rng, bool keep_cache) {
    Marcher m(settings, tp.extent);
    RenderResult res;
    res.rgba.resize(rays.origins.size());
    if (keep_cache) {
        res.cache = std::make_unique<RenderCache>();
        res.cache->per_ray.resize(rays.origins.size());
        res.cache->final_trans.resize(rays.origins.size());
        res.cache->settings = settings;
        res.cache->delta = m.delta;
        res.cache->fingerprint = field_fingerprint(tp, params);
    }

    DecoderWorkspace ws;
    std::vector<double> feat(static_cast<size_t>(tp.feature_dim()));
    const bool jitter = settings.jitter && jitter_rng;

    for (size_t r = 0; r < rays.origins.size(); ++r) {
        const Vec3& o = rays.origins[r];
        const Vec3& d = rays.directions[r];
        double trans = 1.0;
        double rgb[3] = {0, 0, 0};
        auto* samples = keep_cache ? &res.cache->per_ray[r] : nullptr;
        for (int i = 0; i < m.n_samples; ++i) {
            const double frac = jitter ? jitter_rng->uniform() : 0.5;
            const double t = m.t_of(i, frac);
            double p[3] = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
            if (!inside_cube(p, tp.extent)) continue;
            if (grid && !grid->occupied_at(p)) continue;
            sample(tp, p, feat);
            const DecoderOutput out = decode_ws(params, feat, ws);
            const double alpha = 1.0 - std::exp(-out.sigma * m.delta);
            for (int c = 0; c < 3; ++c) rgb[c] += trans * alpha * out.rgb[c];
            if (samples)
                samples->push_back({{p[0], p[1], p[2]},
                                    out.sigma,
                                    alpha,
                                    trans,
                                    {out.rgb[0], out.rgb[1], out.rgb[2]}});
            trans *= 1.0 - alpha;
            if (trans < kMinTrans) break;
        }
        for (int c = 0; c < 3; ++c) rgb[c] += trans * settings.background[c];
        res.rgba[r] = {rgb[0], rgb[1], rgb[2], 1.0 - trans};
        if (keep_cache) res.cache->final_trans[r] = trans;
    }
    return res;
}

std::vector<Rgba> render_rays_field(const FieldFn& field, const RayBatch& rays, double extent,
                                    const OccupancyGrid* grid, const RenderSettings& settings,
                                    Rng* jitter_rng) {
    Marcher m(settings, extent);
    std::vector<Rgba> out(rays.origins.size());
    const bool jitter = settings.jitter && jitter_rng;
    for (size_t r = 0; r < rays.origins.size(); ++r) {
        const Vec3& o = rays.origins[r];
        const Vec3& d = rays.directions[r];
        double trans = 1.0;
        double rgb[3] = {0, 0, 0};
        for (int i = 0; i < m.n_samples; ++i) {
            const double frac = jitter ? jitter_rng->uniform() : 0.5;
            const double t = m.t_of(i, frac);
            double p[3] = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
            if (!inside_cube(p, extent)) continue;
            if (grid && !grid->occupied_at(p)) continue;
            double sigma, c3[3];
            field(p, sigma, c3);
            const double alpha = 1.0 - std::exp(-sigma * m.delta);
            for (int c = 0; c < 3; ++c) rgb[c] += trans * alpha * c3[c];
            trans *= 1.0 - alpha;
            if (trans < kMinTrans) break;
        }
        for (int c = 0; c < 3; ++c) rgb[c] += trans * settings.background[c];
        out[r] = {rgb[0], rgb[1], rgb[2], 1.0 - trans};
    }
    return out;
}

void render_backward(const RenderCache& cache, const Triplane& tp, const DecoderParams& params,
                     std::span<const Rgba> upstream, TriplaneGrads& grad_tp,
                     std::span<double> grad_params) {
    if (cache.fingerprint != field_fingerprint(tp, params))
        throw std::invalid_argument("render_backward: stale cache (field changed since forward)");
    if (upstream.size() != cache.per_ray.size())
        throw std::invalid_argument("render_backward: upstream size mismatch");
    if (!grad_params.empty() && static_cast<int64_t>(grad_params.size()) != params.param_count())
        throw std::invalid_argument("render_backward: grad_params length mismatch");

    DecoderWorkspace ws;
    std::vector<double> feat(static_cast<size_t>(tp.feature_dim()));
    std::vector<double> grad_feat(feat.size());
    const Vec3& bg = cache.settings.background;

    for (size_t r = 0; r < cache.per_ray.size(); ++r) {
        const auto& samples = cache.per_ray[r];
        const double g_rgb[3] = {upstream[r][0], upstream[r][1], upstream[r][2]};
        const double g_alpha = upstream[r][3];
        // sweep back to front: B composites everything behind the sample
        // over the background, U is the transmittance behind it.
        double B[3] = {bg[0], bg[1], bg[2]};
        double U = 1.0;
        for (size_t i = samples.size(); i-- > 0;) {
            const auto& s = samples[i];
            double g_a = g_alpha * s.trans * U;
            for (int c = 0; c < 3; ++c) g_a += g_rgb[c] * s.trans * (s.rgb[c] - B[c]);
            const double g_sigma = g_a * cache.delta * (1.0 - s.alpha);
            DecoderOutputGrad up;
            up.d_sigma = g_sigma;
            for (int c = 0; c < 3; ++c) up.d_rgb[c] = g_rgb[c] * s.trans * s.alpha;

            sample(tp, s.pos.data(), feat);
            std::fill(grad_feat.begin(), grad_feat.end(), 0.0);
            decode_backward_ws(params, feat, up, grad_params, grad_feat, ws);
            sample_backward(tp, s.pos.data(), grad_feat, grad_tp);

            for (int c = 0; c < 3; ++c) B[c] = s.alpha * s.rgb[c] + (1.0 - s.alpha) * B[c];
            U *= 1.0 - s.alpha;
        }
    }
}

double render_loss(std::span<const Rgba> pred, std::span<const Rgba> target,
                   std::span<Rgba> grad_pred) {
    if (pred.size() != target.size()) throw std::invalid_argument("render_loss: shape mismatch");
    if (!grad_pred.empty() && grad_pred.size() != pred.size())
        throw std::invalid_argument("render_loss: grad shape mismatch");
    const double n = static_cast<double>(pred.size()) * 4.0;
    double loss = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        for (int c = 0; c < 4; ++c) {
            const double d = pred[i][c] - target[i][c];
            loss += d * d;
            if (!grad_pred.empty()) grad_pred[i][c] = 2.0 * d / n;
        }
    return loss / n;
}

Tensor render_view(const Triplane& tp, const DecoderParams& params, const CameraConfig& cam,
                   const OccupancyGrid* grid, const RenderSettings& settings) {
    RayBatch rays = generate_rays_full(cam);
    auto res = render_rays(tp, params, rays, grid, settings, nullptr, false);
    Tensor img({cam.height, cam.width, 4});
    for (int i = 0; i < rays.count(); ++i) {
        const auto& px = rays.pixels[static_cast<size_t>(i)];
        for (int c = 0; c < 4; ++c) img.at(px[1], px[0], c) = res.rgba[static_cast<size_t>(i)][c];
    }
    return img;
}

}  // namespace trifield
