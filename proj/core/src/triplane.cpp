// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/triplane.hpp"

#include <fftw3.h>

#include <cmath>
#include <stdexcept>

#include "trifield/serialize.hpp"

namespace trifield {

Triplane::Triplane(int res_, int channels_, double extent_)
    : res(res_), channels(channels_), extent(extent_) {
    if (res < 2) throw std::invalid_argument("Triplane: resolution must be >= 2");
    if (channels < 1) throw std::invalid_argument("Triplane: channels must be >= 1");
    if (!(extent > 0.0)) throw std::invalid_argument("Triplane: extent must be positive");
    for (auto& pl : planes) pl = Tensor({res, res, channels});
}

TriplaneGrads::TriplaneGrads(const Triplane& tp) {
    for (int k = 0; k < 3; ++k) planes[k] = Tensor({tp.res, tp.res, tp.channels});
}

void TriplaneGrads::clear() {
    for (auto& pl : planes) pl.fill(0.0);
}

void init_gaussian(Triplane& tp, Rng& rng, double stddev) {
    for (auto& pl : tp.planes)
        for (double& x : pl.v) x = stddev * rng.normal();
}

namespace {

struct Tap {
    int i0, j0, i1, j1;
    double fr, fc;       // fractional offsets
    double dr, dc;       // d(pixel coord)/d(world coord), 0 when clamped
};

// World coordinate -> bilinear tap on an n x n grid over [-e, e].
Tap make_tap(double row_w, double col_w, int n, double e) {
    Tap t;
    auto axis = [&](double c, int& a0, int& a1, double& f, double& d) {
        double q = (c + e) / (2.0 * e) * (n - 1);
        d = (n - 1) / (2.0 * e);
        if (q <= 0.0) {
            q = 0.0;
            d = 0.0;
        } else if (q >= n - 1) {
            q = n - 1;
            d = 0.0;
        }
        a0 = static_cast<int>(q);
        if (a0 > n - 2) a0 = n - 2;
        a1 = a0 + 1;
        f = q - a0;
    };
    axis(row_w, t.i0, t.i1, t.fr, t.dr);
    axis(col_w, t.j0, t.j1, t.fc, t.dc);
    return t;
}

// Per-plane (row, col) world coordinates for point p = (u, v, w).
inline void plane_coords(const double p[3], int k, double& row, double& col) {
    switch (k) {
        case 0: row = p[0]; col = p[1]; break;  // uv
        case 1: row = p[2]; col = p[0]; break;  // wu
        default: row = p[1]; col = p[2]; break; // vw
    }
}

void check_point(const double p[3]) {
    for (int a = 0; a < 3; ++a)
        if (!std::isfinite(p[a])) throw std::invalid_argument("sample: non-finite point");
}

}  // namespace

void sample(const Triplane& tp, const double p[3], std::span<double> out) {
    check_point(p);
    const int C = tp.channels;
    if (static_cast<int>(out.size()) != 3 * C)
        throw std::invalid_argument("sample: output span must have length 3C");
    for (int k = 0; k < 3; ++k) {
        double row, col;
        plane_coords(p, k, row, col);
        Tap t = make_tap(row, col, tp.res, tp.extent);
        const Tensor& pl = tp.planes[k];
        const double w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc;
        const double w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
        const double* r0 = &pl.v[(static_cast<size_t>(t.i0) * tp.res + t.j0) * C];
        const double* r1 = &pl.v[(static_cast<size_t>(t.i0) * tp.res + t.j1) * C];
        const double* r2 = &pl.v[(static_cast<size_t>(t.i1) * tp.res + t.j0) * C];
        const double* r3 = &pl.v[(static_cast<size_t>(t.i1) * tp.res + t.j1) * C];
        double* o = &out[static_cast<size_t>(k) * C];
        for (int c = 0; c < C; ++c)
            o[c] = w00 * r0[c] + w01 * r1[c] + w10 * r2[c] + w11 * r3[c];
    }
}

std::vector<double> sample(const Triplane& tp, const double p[3]) {
    std::vector<double> out(static_cast<size_t>(3) * tp.channels);
    sample(tp, p, out);
    return out;
}

void sample_backward(const Triplane& tp, const double p[3], std::span<const double> upstream,
                     TriplaneGrads& acc, double* grad_p) {
    check_point(p);
    const int C = tp.channels;
    if (static_cast<int>(upstream.size()) != 3 * C)
        throw std::invalid_argument("sample_backward: upstream must have length 3C");
    for (int k = 0; k < 3; ++k) {
        double row, col;
        plane_coords(p, k, row, col);
        Tap t = make_tap(row, col, tp.res, tp.extent);
        const double w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc;
        const double w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
        const Tensor& pl = tp.planes[k];
        Tensor& g = acc.planes[k];
        double* g0 = &g.v[(static_cast<size_t>(t.i0) * tp.res + t.j0) * C];
        double* g1 = &g.v[(static_cast<size_t>(t.i0) * tp.res + t.j1) * C];
        double* g2 = &g.v[(static_cast<size_t>(t.i1) * tp.res + t.j0) * C];
        double* g3 = &g.v[(static_cast<size_t>(t.i1) * tp.res + t.j1) * C];
        const double* up = &upstream[static_cast<size_t>(k) * C];
        double drow = 0.0, dcol = 0.0;
        for (int c = 0; c < C; ++c) {
            const double u = up[c];
            g0[c] += w00 * u;
            g1[c] += w01 * u;
            g2[c] += w10 * u;
            g3[c] += w11 * u;
            if (grad_p) {
                const double v00 = pl.v[(static_cast<size_t>(t.i0) * tp.res + t.j0) * C + c];
                const double v01 = pl.v[(static_cast<size_t>(t.i0) * tp.res + t.j1) * C + c];
                const double v10 = pl.v[(static_cast<size_t>(t.i1) * tp.res + t.j0) * C + c];
                const double v11 = pl.v[(static_cast<size_t>(t.i1) * tp.res + t.j1) * C + c];
                drow += u * ((1 - t.fc) * (v10 - v00) + t.fc * (v11 - v01));
                dcol += u * ((1 - t.fr) * (v01 - v00) + t.fr * (v11 - v10));
            }
        }
        if (grad_p) {
            drow *= t.dr;
            dcol *= t.dc;
            switch (k) {
                case 0: grad_p[0] += drow; grad_p[1] += dcol; break;
                case 1: grad_p[2] += drow; grad_p[0] += dcol; break;
                default: grad_p[1] += drow; grad_p[2] += dcol; break;
            }
        }
    }
}

Tensor rollout(const Triplane& tp) {
    const int H = tp.res, W = tp.res, C = tp.channels;
    Tensor out({H, 3 * W, C});
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c)
                    out.at(i, k * W + j, c) = tp.planes[k].at(i, j, c);
    return out;
}

Triplane unrollout(const Tensor& rolled, double extent) {
    if (rolled.rank() != 3) throw std::invalid_argument("unrollout: expected rank-3 tensor");
    const int H = rolled.dim(0), W3 = rolled.dim(1), C = rolled.dim(2);
    if (W3 % 3 != 0) throw std::invalid_argument("unrollout: width not divisible by 3");
    const int W = W3 / 3;
    if (W != H) throw std::invalid_argument("unrollout: planes must be square");
    Triplane tp(H, C, extent);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c)
                    tp.planes[k].at(i, j, c) = rolled.at(i, k * W + j, c);
    return tp;
}

SpectrumReport spectrum(const Triplane& tp) {
    const int H = tp.res, W = tp.res, C = tp.channels;
    const int nbins = static_cast<int>(std::floor(std::sqrt(0.5) * H)) + 1;
    std::vector<double> bin_logp(nbins, 0.0);
    std::vector<int64_t> bin_count(nbins, 0);
    double total = 0.0, high = 0.0;

    std::vector<fftw_complex> in(static_cast<size_t>(H) * W), out(static_cast<size_t>(H) * W);
    fftw_plan plan = fftw_plan_dft_2d(H, W, in.data(), out.data(), FFTW_FORWARD, FFTW_ESTIMATE);

    for (int k = 0; k < 3; ++k) {
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    in[static_cast<size_t>(i) * W + j][0] = tp.planes[k].at(i, j, c);
                    in[static_cast<size_t>(i) * W + j][1] = 0.0;
                }
            fftw_execute(plan);
            for (int i = 0; i < H; ++i) {
                const int ki = std::min(i, H - i);
                for (int j = 0; j < W; ++j) {
                    const int kj = std::min(j, W - j);
                    const double re = out[static_cast<size_t>(i) * W + j][0];
                    const double im = out[static_cast<size_t>(i) * W + j][1];
                    const double power = re * re + im * im;
                    const double r = std::sqrt(double(ki) * ki + double(kj) * kj);
                    total += power;
                    if (r / H > 0.25) high += power;
                    const int b = static_cast<int>(std::lround(r));
                    bin_logp[b] += std::log10(power + 1e-30);
                    bin_count[b] += 1;
                }
            }
        }
    }
    fftw_destroy_plan(plan);

    SpectrumReport rep;
    rep.total_power = total;
    rep.high_freq_energy_ratio = total > 0.0 ? high / total : 0.0;
    for (int b = 0; b < nbins; ++b)
        if (bin_count[b] > 0)
            rep.radial_bins.emplace_back(double(b) / H, bin_logp[b] / bin_count[b]);
    return rep;
}

void validate_strict(const Triplane& tp) {
    const int H = tp.res;
    if (H < 8 || (H & (H - 1)) != 0)
        throw std::invalid_argument("triplane resolution must be a power of two >= 8");
    if (tp.channels < 1) throw std::invalid_argument("triplane channels must be >= 1");
    if (!(tp.extent > 0.0)) throw std::invalid_argument("triplane extent must be positive");
    for (const auto& pl : tp.planes) {
        if (pl.shape != std::vector<int>{H, H, tp.channels})
            throw std::invalid_argument("triplane plane shape mismatch");
        if (!all_finite(pl)) throw std::invalid_argument("triplane has non-finite entries");
    }
}

void save_triplane(const Triplane& tp, const std::string& path) {
    validate_strict(tp);
    BinWriter w(path);
    w.magic("TPLN");
    w.u32(1);
    w.u32(static_cast<uint32_t>(tp.res));
    w.u32(static_cast<uint32_t>(tp.res));
    w.u32(static_cast<uint32_t>(tp.channels));
    w.f64(tp.extent);
    for (const auto& pl : tp.planes)
        for (double x : pl.v) w.f32(static_cast<float>(x));
}

Triplane load_triplane(const std::string& path) {
    BinReader r(path);
    r.expect_magic("TPLN");
    const uint32_t version = r.u32();
    if (version != 1) throw IoError("unsupported triplane file version");
    const int H = static_cast<int>(r.u32());
    const int W = static_cast<int>(r.u32());
    const int C = static_cast<int>(r.u32());
    const double extent = r.f64();
    if (H != W) throw IoError("triplane file: H != W");
    Triplane tp(H, C, extent);
    for (auto& pl : tp.planes)
        for (double& x : pl.v) x = r.f32();
    validate_strict(tp);
    return tp;
}

}  // namespace trifield
