// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trifield/renderer.hpp"

using namespace trifield;

TEST_SUITE_BEGIN("renderer");

namespace {

CameraConfig test_camera(int res = 3) {
    CameraConfig cam;
    cam.position = {3, 0, 0};
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.fov_y = M_PI / 2;
    cam.width = cam.height = res;
    return cam;
}

// Decoder whose output is constant everywhere: zero weights, chosen biases.
DecoderParams constant_decoder(double density_bias, const std::array<double, 3>& rgb_bias,
                               int feat_dim = 6) {
    DecoderParams p;
    p.cfg = DecoderConfig{.feat_dim = feat_dim, .hidden = 4, .depth = 1};
    p.weights = {Tensor({4, feat_dim}), Tensor({4, 4})};
    p.biases = {Tensor({4}), Tensor({4})};
    p.biases[1][0] = density_bias;
    for (int c = 0; c < 3; ++c) p.biases[1][c + 1] = rgb_bias[c];
    return p;
}

double softplus(double x) { return std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

RayBatch axis_ray() {
    RayBatch rays;
    rays.origins.push_back({-2.0, 0.05, -0.1});
    rays.directions.push_back({1.0, 0.0, 0.0});
    rays.pixels.push_back({0, 0});
    return rays;
}

}  // namespace

TEST_CASE("center pixel ray follows the view axis") {
    auto cam = test_camera(3);
    auto rays = generate_rays_full(cam);
    REQUIRE(rays.count() == 9);
    const auto& d = rays.directions[4];  // center of 3x3
    CHECK(d[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("all ray directions are unit norm") {
    auto cam = test_camera(7);
    cam.position = {1.5, -2.0, 0.7};
    cam.look_at = {0.1, 0.3, -0.2};
    auto rays = generate_rays_full(cam);
    for (const auto& d : rays.directions) {
        const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        CHECK(std::abs(n - 1.0) < 1e-9);
    }
}

TEST_CASE("fov = pi/2 corner ray of a 2x2 image matches the intrinsic-matrix oracle") {
    auto cam = test_camera(2);
    auto rays = generate_rays(cam, std::vector<std::array<int, 2>>{{0, 0}});
    // oracle: explicit pinhole intrinsics, f = (H/2)/tan(fov/2)
    const double f = (2.0 / 2.0) / std::tan(cam.fov_y / 2.0);
    const double xc = (0 + 0.5 - 1.0) / f;  // camera-space x of the pixel
    const double yc = (1.0 - (0 + 0.5)) / f;
    // camera basis for this configuration: fwd=(-1,0,0), right=(0,1,0), up=(0,0,1)
    double d[3] = {-1.0 + 0.0, xc * 1.0, yc * 1.0};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (int a = 0; a < 3; ++a) d[a] /= n;
    CHECK(rays.directions[0][0] == doctest::Approx(d[0]).epsilon(1e-12));
    CHECK(rays.directions[0][1] == doctest::Approx(d[1]).epsilon(1e-12));
    CHECK(rays.directions[0][2] == doctest::Approx(d[2]).epsilon(1e-12));
}

TEST_CASE("degenerate cameras are rejected") {
    auto cam = test_camera();
    cam.up = {-1, 0, 0};  // parallel to the view axis
    CHECK_THROWS_AS(generate_rays_full(cam), std::invalid_argument);
    cam = test_camera();
    cam.fov_y = 0.0;
    CHECK_THROWS_AS(generate_rays_full(cam), std::invalid_argument);
    cam = test_camera();
    cam.position = cam.look_at;
    CHECK_THROWS_AS(generate_rays_full(cam), std::invalid_argument);
    cam = test_camera();
    CHECK_THROWS_AS(generate_rays(cam, std::vector<std::array<int, 2>>{{5, 0}}),
                    std::invalid_argument);
}

TEST_CASE("zero-density field renders the background exactly") {
    Triplane tp(8, 2);
    auto dec = constant_decoder(-60.0, {0, 0, 0});
    RenderSettings rs;
    rs.n_samples = 16;
    rs.background = {1.0, 0.5, 0.25};
    auto cam = test_camera(4);
    auto rays = generate_rays_full(cam);
    auto res = render_rays(tp, dec, rays, nullptr, rs);
    for (const auto& px : res.rgba) {
        CHECK(px[0] == 1.0);
        CHECK(px[1] == 0.5);
        CHECK(px[2] == 0.25);
        CHECK(px[3] == 0.0);
    }
}

TEST_CASE("opaque front sample dominates the ray") {
    Triplane tp(8, 2);
    auto dec = constant_decoder(50.0, {4.0, -4.0, 0.0});
    RenderSettings rs;
    rs.n_samples = 8;
    rs.near = 1.2;
    rs.far = 2.8;
    auto rays = axis_ray();
    auto res = render_rays(tp, dec, rays, nullptr, rs);
    const double c0 = sigmoid(4.0), c1 = sigmoid(-4.0), c2 = 0.5;
    CHECK(res.rgba[0][0] == doctest::Approx(c0).epsilon(1e-5));
    CHECK(res.rgba[0][1] == doctest::Approx(c1).epsilon(1e-5));
    CHECK(res.rgba[0][2] == doctest::Approx(c2).epsilon(1e-5));
    CHECK(res.rgba[0][3] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("two-sample ray matches the closed-form compositing oracle") {
    Triplane tp(8, 2);
    auto dec = constant_decoder(0.8, {1.0, -0.5, 0.25});
    RenderSettings rs;
    rs.n_samples = 2;
    rs.near = 1.2;
    rs.far = 2.8;  // both midpoints stay inside the volume
    rs.background = {1, 1, 1};
    auto rays = axis_ray();
    auto res = render_rays(tp, dec, rays, nullptr, rs);

    const double delta = (2.8 - 1.2) / 2.0;
    const double sig = softplus(0.8);
    const double c[3] = {sigmoid(1.0), sigmoid(-0.5), sigmoid(0.25)};
    const double a0 = 1.0 - std::exp(-sig * delta), a1 = a0;
    double expect[4];
    for (int ch = 0; ch < 3; ++ch)
        expect[ch] = a0 * c[ch] + (1 - a0) * a1 * c[ch] + (1 - a0) * (1 - a1) * 1.0;
    expect[3] = 1.0 - (1 - a0) * (1 - a1);
    for (int ch = 0; ch < 4; ++ch)
        CHECK(res.rgba[0][ch] == doctest::Approx(expect[ch]).epsilon(1e-12));
}

TEST_CASE("near >= far and n_samples < 2 are rejected") {
    Triplane tp(8, 1);
    auto dec = constant_decoder(0.0, {0, 0, 0}, 3);
    RenderSettings rs;
    rs.near = 2.0;
    rs.far = 2.0;
    auto rays = axis_ray();
    CHECK_THROWS_AS(render_rays(tp, dec, rays, nullptr, rs), std::invalid_argument);
    rs = RenderSettings{};
    rs.n_samples = 1;
    CHECK_THROWS_AS(render_rays(tp, dec, rays, nullptr, rs), std::invalid_argument);
}

TEST_CASE("transmittance trace is in [0,1] and non-increasing") {
    Triplane tp(8, 2);
    Rng rng(3);
    init_gaussian(tp, rng, 1.0);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 16, .depth = 2};
    auto dec = make_decoder(cfg, rng);
    dec.biases.back()[0] = 1.0;  // put some mass in the field
    RenderSettings rs;
    rs.n_samples = 24;
    auto cam = test_camera(4);
    auto res = render_rays(tp, dec, generate_rays_full(cam), nullptr, rs);
    for (size_t r = 0; r < res.cache->per_ray.size(); ++r) {
        double prev = 1.0;
        for (const auto& s : res.cache->per_ray[r]) {
            CHECK(s.trans <= prev + 1e-15);
            CHECK(s.trans >= 0.0);
            CHECK(s.trans <= 1.0);
            prev = s.trans;
        }
        CHECK(res.rgba[r][3] >= 0.0);
        CHECK(res.rgba[r][3] <= 1.0);
    }
}

TEST_CASE("zero upstream gives zero render gradients") {
    Triplane tp(8, 2);
    Rng rng(5);
    init_gaussian(tp, rng, 0.5);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 8, .depth = 1};
    auto dec = make_decoder(cfg, rng);
    RenderSettings rs;
    rs.n_samples = 8;
    auto res = render_rays(tp, dec, axis_ray(), nullptr, rs);
    TriplaneGrads gtp(tp);
    std::vector<double> gp(dec.param_count(), 0.0);
    std::vector<Rgba> up(1, Rgba{0, 0, 0, 0});
    render_backward(*res.cache, tp, dec, up, gtp, gp);
    for (const auto& pl : gtp.planes)
        for (double x : pl.v) CHECK(x == 0.0);
    for (double x : gp) CHECK(x == 0.0);
}

TEST_CASE("single evaluated sample reduces to the one-step chain rule") {
    Triplane tp(8, 2);
    Rng rng(7);
    init_gaussian(tp, rng, 0.5);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 8, .depth = 1};
    auto dec = make_decoder(cfg, rng);
    dec.biases.back()[0] = 0.5;

    // grid occupancy only around the first sample position
    RenderSettings rs;
    rs.n_samples = 2;
    rs.near = 1.2;
    rs.far = 2.8;
    auto rays = axis_ray();
    const double t0 = 1.2 + 0.5 * 0.8;  // first midpoint
    double p0[3] = {rays.origins[0][0] + t0, rays.origins[0][1], rays.origins[0][2]};
    OccupancyGrid grid(8, 1.0);
    for (size_t i = 0; i < grid.flags.size(); ++i) grid.flags[i] = 0;
    {
        // mark only the cell containing p0
        int idx[3];
        for (int a = 0; a < 3; ++a) idx[a] = static_cast<int>((p0[a] + 1.0) / 2.0 * 8);
        grid.flags[(static_cast<size_t>(idx[0]) * 8 + idx[1]) * 8 + idx[2]] = 1;
    }

    auto res = render_rays(tp, dec, rays, &grid, rs);
    REQUIRE(res.cache->per_ray[0].size() == 1);

    std::vector<Rgba> up(1, Rgba{0.7, -0.3, 0.2, 0.9});
    TriplaneGrads got_tp(tp);
    std::vector<double> got_dec(dec.param_count(), 0.0);
    render_backward(*res.cache, tp, dec, up, got_tp, got_dec);

    // symbolic single-sample chain rule: out = [a*c + (1-a)*bg, a],
    // da/dsigma = delta*(1-a); compose through decode/sample backward ops.
    const double delta = 0.8;
    auto feat = sample(tp, p0);
    auto out = decode(dec, feat);
    const double a = 1.0 - std::exp(-out.sigma * delta);
    DecoderOutputGrad dg;
    dg.d_sigma = delta * (1.0 - a) *
                 (up[0][0] * (out.rgb[0] - 1.0) + up[0][1] * (out.rgb[1] - 1.0) +
                  up[0][2] * (out.rgb[2] - 1.0) + up[0][3]);
    for (int c = 0; c < 3; ++c) dg.d_rgb[c] = up[0][c] * a;
    TriplaneGrads want_tp(tp);
    std::vector<double> want_dec(dec.param_count(), 0.0), gfeat(6, 0.0);
    decode_backward(dec, feat, dg, want_dec, gfeat);
    sample_backward(tp, p0, gfeat, want_tp);

    for (size_t i = 0; i < want_dec.size(); ++i)
        CHECK(oracles::rel_err(got_dec[i], want_dec[i]) < 1e-12);
    for (int k = 0; k < 3; ++k)
        for (int64_t i = 0; i < tp.planes[k].numel(); ++i)
            CHECK(oracles::rel_err(got_tp.planes[k][i], want_tp.planes[k][i]) < 1e-12);
}

TEST_CASE("end-to-end render gradients match finite differences") {
    Triplane tp(8, 2);
    Rng rng(11);
    init_gaussian(tp, rng, 0.4);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 12, .depth = 2};
    auto dec = make_decoder(cfg, rng);
    dec.biases.back()[0] = 0.3;

    RenderSettings rs;
    rs.n_samples = 8;
    rs.near = 1.0;
    rs.far = 3.0;
    RayBatch rays;
    const double offs[4][2] = {{0.05, -0.1}, {-0.4, 0.3}, {0.55, 0.5}, {-0.2, -0.6}};
    for (const auto& o : offs) {
        rays.origins.push_back({-2.0, o[0], o[1]});
        rays.directions.push_back({1.0, 0.0, 0.0});
        rays.pixels.push_back({0, 0});
    }

    std::vector<Rgba> up(4);
    for (auto& u : up)
        for (int c = 0; c < 4; ++c) u[c] = rng.uniform(-1, 1);

    auto probe = [&](const Triplane& t, const DecoderParams& d) {
        auto res = render_rays(t, d, rays, nullptr, rs, nullptr, false);
        double s = 0.0;
        for (size_t r = 0; r < res.rgba.size(); ++r)
            for (int c = 0; c < 4; ++c) s += up[r][c] * res.rgba[r][c];
        return s;
    };

    auto res = render_rays(tp, dec, rays, nullptr, rs);
    TriplaneGrads gtp(tp);
    std::vector<double> gdec(dec.param_count(), 0.0);
    render_backward(*res.cache, tp, dec, up, gtp, gdec);

    const double h = 1e-5;
    // 20 random decoder parameters
    auto flat = dec.flatten();
    for (int trial = 0; trial < 20; ++trial) {
        const size_t idx = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(flat.size()) - 1));
        auto fp = flat, fm = flat;
        fp[idx] += h;
        fm[idx] -= h;
        DecoderParams dp = dec, dm = dec;
        dp.unflatten(fp);
        dm.unflatten(fm);
        const double fd = (probe(tp, dp) - probe(tp, dm)) / (2 * h);
        CHECK(oracles::rel_err(fd, gdec[idx], 1e-7) < 1e-4);
    }
    // 20 random texels
    for (int trial = 0; trial < 20; ++trial) {
        const int k = rng.uniform_int(0, 2);
        const int64_t idx = rng.uniform_int(0, static_cast<int>(tp.planes[k].numel()) - 1);
        Triplane tpp = tp, tpm = tp;
        tpp.planes[k][idx] += h;
        tpm.planes[k][idx] -= h;
        const double fd = (probe(tpp, dec) - probe(tpm, dec)) / (2 * h);
        CHECK(oracles::rel_err(fd, gtp.planes[k][idx], 1e-7) < 1e-4);
    }
}

TEST_CASE("stale cache is rejected") {
    Triplane tp(8, 2);
    Rng rng(13);
    init_gaussian(tp, rng, 0.4);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 8, .depth = 1};
    auto dec = make_decoder(cfg, rng);
    RenderSettings rs;
    rs.n_samples = 4;
    auto res = render_rays(tp, dec, axis_ray(), nullptr, rs);
    for (int64_t i = 0; i < 8; ++i) tp.planes[0][i] += 1.0;
    TriplaneGrads gtp(tp);
    std::vector<double> gp(dec.param_count(), 0.0);
    std::vector<Rgba> up(1, Rgba{1, 0, 0, 0});
    CHECK_THROWS_AS(render_backward(*res.cache, tp, dec, up, gtp, gp), std::invalid_argument);
}

TEST_CASE("render_loss closed forms and gradient") {
    std::vector<Rgba> pred(3), target(3);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c) {
            target[i][c] = 0.25 * i + 0.1 * c;
            pred[i][c] = target[i][c];
        }
    std::vector<Rgba> grad(3);
    CHECK(render_loss(pred, target, grad) == 0.0);
    for (auto& p : pred)
        for (int c = 0; c < 4; ++c) p[c] += 0.1;
    CHECK(render_loss(pred, target, grad) == doctest::Approx(0.01).epsilon(1e-12));

    // finite-difference check of the gradient
    Rng rng(17);
    for (auto& p : pred)
        for (int c = 0; c < 4; ++c) p[c] = rng.uniform();
    render_loss(pred, target, grad);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c) {
            auto pp = pred, pm = pred;
            pp[i][c] += h;
            pm[i][c] -= h;
            const double fd = (render_loss(pp, target, {}) - render_loss(pm, target, {})) / (2 * h);
            CHECK(oracles::rel_err(fd, grad[i][c], 1e-9) < 1e-6);
        }
}

TEST_CASE("zero field leaves the occupancy grid empty") {
    OccupancyGrid grid(16, 1.0);
    Rng rng(19);
    update_occupancy_field([](const double*, double& s, double* rgb) { s = 0.0; rgb[0] = rgb[1] = rgb[2] = 0; },
                           grid, rng);
    CHECK(grid.occupied_count() == 0);
}

TEST_CASE("occupied count of a centered ball matches its volume") {
    OccupancyGrid grid(32, 1.0);
    Rng rng(23);
    const double r = 0.5;
    update_occupancy_field(
        [r](const double* p, double& s, double* rgb) {
            s = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < r * r) ? 10.0 : 0.0;
            rgb[0] = rgb[1] = rgb[2] = 0;
        },
        grid, rng);
    const double expect = 4.0 / 3.0 * M_PI * std::pow(r / 1.0 * 32 / 2.0, 3.0);
    CHECK(std::abs(grid.occupied_count() - expect) / expect < 0.15);
}

TEST_CASE("grid acceleration changes renders by less than 1e-3") {
    Triplane tp(8, 2);
    Rng rng(29);
    init_gaussian(tp, rng, 0.4);
    DecoderConfig cfg{.feat_dim = 6, .hidden = 12, .depth = 2};
    auto dec = make_decoder(cfg, rng);
    dec.biases.back()[0] = 1.5;

    OccupancyGrid grid(32, 1.0, 1e-3, 0.95);
    Rng grng(31);
    for (int i = 0; i < 16; ++i) update_occupancy(tp, dec, grid, grng);

    RenderSettings rs;
    rs.n_samples = 48;
    auto cam = test_camera(8);
    auto with = render_rays(tp, dec, generate_rays_full(cam), &grid, rs, nullptr, false);
    auto without = render_rays(tp, dec, generate_rays_full(cam), nullptr, rs, nullptr, false);
    double max_diff = 0.0;
    for (size_t i = 0; i < with.rgba.size(); ++i)
        for (int c = 0; c < 4; ++c)
            max_diff = std::max(max_diff, std::abs(with.rgba[i][c] - without.rgba[i][c]));
    CHECK(max_diff < 1e-3);
}

TEST_SUITE_END();
