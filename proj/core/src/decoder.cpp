// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/decoder.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/serialize.hpp"

namespace trifield {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// layer widths: feat_dim -> hidden x depth -> 4
std::vector<int> layer_widths(const DecoderConfig& cfg) {
    std::vector<int> w;
    w.push_back(cfg.feat_dim);
    for (int i = 0; i < cfg.depth; ++i) w.push_back(cfg.hidden);
    w.push_back(4);
    return w;
}

}  // namespace

int64_t DecoderParams::param_count() const {
    int64_t n = 0;
    for (size_t l = 0; l < weights.size(); ++l) n += weights[l].numel() + biases[l].numel();
    return n;
}

std::vector<double> DecoderParams::flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(param_count()));
    for (size_t l = 0; l < weights.size(); ++l) {
        out.insert(out.end(), weights[l].v.begin(), weights[l].v.end());
        out.insert(out.end(), biases[l].v.begin(), biases[l].v.end());
    }
    return out;
}

void DecoderParams::unflatten(std::span<const double> flat) {
    if (static_cast<int64_t>(flat.size()) != param_count())
        throw std::invalid_argument("unflatten: length mismatch");
    size_t off = 0;
    for (size_t l = 0; l < weights.size(); ++l) {
        std::copy(flat.begin() + off, flat.begin() + off + weights[l].v.size(),
                  weights[l].v.begin());
        off += weights[l].v.size();
        std::copy(flat.begin() + off, flat.begin() + off + biases[l].v.size(),
                  biases[l].v.begin());
        off += biases[l].v.size();
    }
}

DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng) {
    DecoderParams p;
    p.cfg = cfg;
    const auto widths = layer_widths(cfg);
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        Tensor W({out, in});
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& x : W.v) x = scale * rng.normal();
        p.weights.push_back(std::move(W));
        p.biases.push_back(Tensor({out}));
    }
    p.biases.back().v[0] = -2.5;
    return p;
}

DecoderOutput decode_ws(const DecoderParams& params, std::span<const double> feat,
                        DecoderWorkspace& ws) {
    const auto& cfg = params.cfg;
    const size_t L = params.weights.size();
    if (ws.inputs.size() < 2) ws.inputs.resize(2);
    auto& cur = ws.inputs[0];
    auto& next = ws.inputs[1];
    cur.assign(feat.begin(), feat.end());
    for (size_t l = 0; l < L; ++l) {
        const Tensor& W = params.weights[l];
        const Tensor& b = params.biases[l];
        const int out = W.dim(0), in = W.dim(1);
        if (static_cast<int>(cur.size()) != in)
            throw std::invalid_argument("decode: layer width mismatch");
        next.assign(static_cast<size_t>(out), 0.0);
        for (int o = 0; o < out; ++o) {
            const double* wrow = &W.v[static_cast<size_t>(o) * in];
            double s = b.v[static_cast<size_t>(o)];
            for (int i = 0; i < in; ++i) s += wrow[i] * cur[i];
            next[static_cast<size_t>(o)] = s;
        }
        if (l + 1 < L && cfg.act == Activation::gelu)
            for (double& x : next) x = gelu(x);
        cur.swap(next);
    }
    DecoderOutput o;
    o.sigma = softplus(cur[0]);
    for (int c = 0; c < 3; ++c) o.rgb[static_cast<size_t>(c)] = sigmoid(cur[static_cast<size_t>(c) + 1]);
    return o;
}

DecoderOutput decode(const DecoderParams& params, std::span<const double> feat) {
    if (static_cast<int>(feat.size()) != params.cfg.feat_dim)
        throw std::invalid_argument("decode: feature width mismatch");
    for (double x : feat)
        if (!std::isfinite(x)) throw std::invalid_argument("decode: non-finite feature");
    DecoderWorkspace ws;
    return decode_ws(params, feat, ws);
}

void decode_backward_ws(const DecoderParams& params, std::span<const double> feat,
                        const DecoderOutputGrad& upstream, std::span<double> grad_params,
                        std::span<double> grad_feat, DecoderWorkspace& ws) {
    const auto& cfg = params.cfg;
    const size_t L = params.weights.size();
    if (ws.inputs.size() < L) ws.inputs.resize(L);
    if (ws.preact.size() < L) ws.preact.resize(L);

    // forward, caching pre-activations and layer inputs
    auto& cur = ws.dnext;  // reuse as forward scratch before the backward sweep
    cur.assign(feat.begin(), feat.end());
    for (size_t l = 0; l < L; ++l) {
        ws.inputs[l] = cur;
        const Tensor& W = params.weights[l];
        const Tensor& b = params.biases[l];
        const int out = W.dim(0), in = W.dim(1);
        if (static_cast<int>(cur.size()) != in)
            throw std::invalid_argument("decode_backward: layer width mismatch");
        auto& z = ws.preact[l];
        z.assign(static_cast<size_t>(out), 0.0);
        for (int o = 0; o < out; ++o) {
            const double* wrow = &W.v[static_cast<size_t>(o) * in];
            double s = b.v[static_cast<size_t>(o)];
            for (int i = 0; i < in; ++i) s += wrow[i] * cur[i];
            z[static_cast<size_t>(o)] = s;
        }
        cur = z;
        if (l + 1 < L && cfg.act == Activation::gelu)
            for (double& x : cur) x = gelu(x);
    }

    // output head: sigma = softplus(z0), rgb = sigmoid(z1..3)
    auto& dz = ws.dz;
    dz.assign(4, 0.0);
    dz[0] = upstream.d_sigma * sigmoid(ws.preact[L - 1][0]);
    for (int c = 0; c < 3; ++c) {
        const double s = sigmoid(ws.preact[L - 1][static_cast<size_t>(c) + 1]);
        dz[static_cast<size_t>(c) + 1] = upstream.d_rgb[static_cast<size_t>(c)] * s * (1.0 - s);
    }

    size_t off_end = static_cast<size_t>(params.param_count());
    auto& dnext = ws.dnext;
    for (size_t l = L; l-- > 0;) {
        const Tensor& W = params.weights[l];
        const int out = W.dim(0), in = W.dim(1);
        off_end -= W.v.size() + params.biases[l].v.size();
        if (!grad_params.empty()) {
            double* gw = grad_params.data() + off_end;
            double* gb = gw + static_cast<size_t>(out) * in;
            const double* x = ws.inputs[l].data();
            for (int o = 0; o < out; ++o) {
                const double g = dz[static_cast<size_t>(o)];
                double* gwrow = gw + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) gwrow[i] += g * x[i];
                gb[o] += g;
            }
        }
        dnext.assign(static_cast<size_t>(in), 0.0);
        for (int o = 0; o < out; ++o) {
            const double g = dz[static_cast<size_t>(o)];
            const double* wrow = &W.v[static_cast<size_t>(o) * in];
            for (int i = 0; i < in; ++i) dnext[static_cast<size_t>(i)] += g * wrow[i];
        }
        if (l > 0) {
            // dnext is w.r.t. post-activation of layer l-1
            if (cfg.act == Activation::gelu)
                for (int i = 0; i < in; ++i)
                    dnext[static_cast<size_t>(i)] *= gelu_grad(ws.preact[l - 1][static_cast<size_t>(i)]);
            dz.swap(dnext);
        } else if (!grad_feat.empty()) {
            for (int i = 0; i < in; ++i) grad_feat[static_cast<size_t>(i)] += dnext[static_cast<size_t>(i)];
        }
    }
}

void decode_backward(const DecoderParams& params, std::span<const double> feat,
                     const DecoderOutputGrad& upstream, std::span<double> grad_params,
                     std::span<double> grad_feat) {
    const auto& cfg = params.cfg;
    if (static_cast<int>(feat.size()) != cfg.feat_dim)
        throw std::invalid_argument("decode_backward: feature width mismatch");
    if (!grad_params.empty() && static_cast<int64_t>(grad_params.size()) != params.param_count())
        throw std::invalid_argument("decode_backward: grad_params length mismatch");
    if (!grad_feat.empty() && static_cast<int>(grad_feat.size()) != cfg.feat_dim)
        throw std::invalid_argument("decode_backward: grad_feat length mismatch");
    DecoderWorkspace ws;
    decode_backward_ws(params, feat, upstream, grad_params, grad_feat, ws);
}

void save_decoder(const DecoderParams& params, const std::string& path) {
    BinWriter w(path);
    w.magic("DEC0");
    w.u32(1);
    w.u32(params.cfg.act == Activation::gelu ? 0u : 1u);
    w.u32(static_cast<uint32_t>(params.weights.size()));
    for (size_t l = 0; l < params.weights.size(); ++l) {
        w.u32(static_cast<uint32_t>(params.weights[l].dim(1)));
        w.u32(static_cast<uint32_t>(params.weights[l].dim(0)));
    }
    for (double x : params.flatten()) w.f64(x);
}

DecoderParams load_decoder(const std::string& path) {
    BinReader r(path);
    r.expect_magic("DEC0");
    if (r.u32() != 1) throw IoError("unsupported decoder file version");
    const uint32_t act = r.u32();
    const uint32_t L = r.u32();
    if (L < 1 || L > 64) throw IoError("decoder file: implausible layer count");
    DecoderParams p;
    std::vector<std::pair<int, int>> dims;
    for (uint32_t l = 0; l < L; ++l) {
        const int in = static_cast<int>(r.u32());
        const int out = static_cast<int>(r.u32());
        dims.emplace_back(in, out);
        p.weights.push_back(Tensor({out, in}));
        p.biases.push_back(Tensor({out}));
    }
    p.cfg.feat_dim = dims.front().first;
    p.cfg.hidden = L > 1 ? dims.front().second : dims.front().first;
    p.cfg.depth = static_cast<int>(L) - 1;
    p.cfg.act = act == 0 ? Activation::gelu : Activation::identity;
    std::vector<double> flat(static_cast<size_t>(p.param_count()));
    for (double& x : flat) x = r.f64();
    p.unflatten(flat);
    if (dims.back().second != 4) throw IoError("decoder file: output width must be 4");
    return p;
}

}  // namespace trifield
