// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/diffusion.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "trifield/errors.hpp"
#include "trifield/image.hpp"
#include "trifield/kv.hpp"
#include "trifield/serialize.hpp"

namespace trifield {

using ad::Tape;
using ad::Var;

Tensor roll_triplane(const Triplane& tp) { return rollout(tp); }

Triplane unroll_tensor(const Tensor& rolled, double extent) { return unrollout(rolled, extent); }

Tensor upsample_rolled_bilinear(const Tensor& lr_rolled, int hr_plane_res) {
    const int h = lr_rolled.dim(0), w3 = lr_rolled.dim(1), C = lr_rolled.dim(2);
    const int w = w3 / 3;
    if (w * 3 != w3) throw std::invalid_argument("upsample_rolled: width not divisible by 3");
    Tensor out({hr_plane_res, 3 * hr_plane_res, C});
    for (int k = 0; k < 3; ++k) {
        Tensor plane({h, w, C});
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < C; ++c) plane.at(i, j, c) = lr_rolled.at(i, k * w + j, c);
        Tensor up = resize_bilinear(plane, hr_plane_res, hr_plane_res);
        for (int i = 0; i < hr_plane_res; ++i)
            for (int j = 0; j < hr_plane_res; ++j)
                for (int c = 0; c < C; ++c) out.at(i, k * hr_plane_res + j, c) = up.at(i, j, c);
    }
    return out;
}

Tensor downsample_rolled_avg(const Tensor& hr_rolled, int lr_plane_res) {
    const int h = hr_rolled.dim(0), w3 = hr_rolled.dim(1), C = hr_rolled.dim(2);
    const int w = w3 / 3;
    if (w * 3 != w3) throw std::invalid_argument("downsample_rolled: width not divisible by 3");
    if (h % lr_plane_res != 0) throw std::invalid_argument("downsample_rolled: non-integer ratio");
    const int r = h / lr_plane_res;
    Tensor out({lr_plane_res, 3 * lr_plane_res, C});
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < lr_plane_res; ++i)
            for (int j = 0; j < lr_plane_res; ++j)
                for (int c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (int di = 0; di < r; ++di)
                        for (int dj = 0; dj < r; ++dj)
                            s += hr_rolled.at(i * r + di, k * w + j * r + dj, c);
                    out.at(i, k * lr_plane_res + j, c) = s / (r * r);
                }
    return out;
}

std::vector<int> resolution_matched_scales(int input_height, int stages, int cond_res) {
    std::vector<int> scales(static_cast<size_t>(stages), -1);
    for (int s = 0; s < stages; ++s) {
        const int stage_h = input_height >> s;
        for (int scale = 0; scale < 3; ++scale) {
            if (cond_res >> (scale + 1) == stage_h) {
                scales[static_cast<size_t>(s)] = scale;
                break;
            }
        }
    }
    return scales;
}

CascadeModel make_cascade(const CascadeConfig& cfg, Rng& rng) {
    CascadeModel m;
    m.cfg = cfg;

    DenoiserConfig base;
    base.plane_height = base.plane_width = cfg.base_res;
    base.in_channels = cfg.channels;
    base.out_channels = cfg.learned_variance ? 2 * cfg.channels : cfg.channels;
    base.model_channels = cfg.base_model_channels;
    base.channel_mult = cfg.base_mult;
    base.res_blocks = cfg.base_res_blocks;
    base.groups = cfg.groups;
    base.attn_width = cfg.attn_width;
    base.bottleneck_self_attention = true;
    base.learned_variance = cfg.learned_variance;
    base.cross_attn_scale = resolution_matched_scales(cfg.base_res, base.stages(), cfg.cond_res);
    base.bottleneck_cross_scale = -1;
    base.cond_patch_size = cfg.patch_size;
    base.cond_base_channels = cfg.cond_base_channels;
    m.base = Denoiser(base, rng);

    DenoiserConfig up;
    up.plane_height = up.plane_width = cfg.hr_res;
    up.in_channels = 2 * cfg.channels;  // noised HR + bilinear-upsampled LR
    up.out_channels = cfg.channels;
    up.model_channels = cfg.up_model_channels;
    up.channel_mult = cfg.up_mult;
    up.res_blocks = cfg.up_res_blocks;
    up.groups = cfg.groups;
    up.attn_width = cfg.attn_width;
    up.bottleneck_self_attention = false;  // high resolutions keep attention at the bottleneck only
    up.learned_variance = false;
    up.cross_attn_scale.assign(static_cast<size_t>(up.stages()), -1);
    up.bottleneck_cross_scale = 0;  // y1 into the middle latents
    up.cond_patch_size = cfg.patch_size;
    up.cond_base_channels = cfg.cond_base_channels;
    m.upsample = Denoiser(up, rng);

    m.enc = add_encoder_params(m.cond, {.in_channels = 3, .base_channels = cfg.cond_base_channels},
                               rng);
    Rng null_rng(rng.next_u64());
    m.null1 = m.cond.add("cond.null1", gaussian_tensor({cfg.cond_base_channels}, 0.02, null_rng));
    m.null2 = m.cond.add("cond.null2", gaussian_tensor({2 * cfg.cond_base_channels}, 0.02, null_rng));
    m.null3 = m.cond.add("cond.null3", gaussian_tensor({4 * cfg.cond_base_channels}, 0.02, null_rng));
    return m;
}

namespace {

Var broadcast_null(Tape& tape, Var token, int h, int w) {
    const int C = tape.value(token).dim(0);
    Var t = tape.reshape(token, {1, 1, C});
    t = tape.broadcast_cols(t, w);
    return tape.broadcast_rows(t, h);
}

DenoiserCondition null_condition_vars(Tape& tape, const CascadeModel& m, const BoundParams& bc) {
    DenoiserCondition cond;
    const int r = m.cfg.cond_res;
    cond.y1 = broadcast_null(tape, bc[m.null1], r / 2, r / 2);
    cond.y2 = broadcast_null(tape, bc[m.null2], r / 4, r / 4);
    cond.y3 = broadcast_null(tape, bc[m.null3], r / 8, r / 8);
    return cond;
}

DenoiserCondition portrait_condition_vars(Tape& tape, const CascadeModel& m, const Tensor& portrait,
                                          const BoundParams& bc) {
    Var img = tape.constant(portrait);
    auto f = encode(tape, img, bc, m.enc);
    return {f.y1, f.y2, f.y3};
}

// Resize, strip alpha over white, and normalize a portrait to [R,R,3].
Tensor prep_portrait(const Tensor& raw, int res) {
    if (raw.rank() != 3) throw std::invalid_argument("portrait: expected [H,W,C]");
    const int C = raw.dim(2);
    Tensor rgb({raw.dim(0), raw.dim(1), 3});
    for (int i = 0; i < raw.dim(0); ++i)
        for (int j = 0; j < raw.dim(1); ++j) {
            const double a = C >= 4 ? raw.at(i, j, 3) : 1.0;
            for (int c = 0; c < 3; ++c)
                rgb.at(i, j, c) = raw.at(i, j, std::min(c, C - 1)) * a + (1.0 - a);
        }
    if (rgb.dim(0) == res && rgb.dim(1) == res) return rgb;
    return resize_bilinear(rgb, res, res);
}

}  // namespace

DiffusionLoss base_loss(CascadeModel& model, const Tensor& x0_lr_rolled, const Tensor* portrait,
                        double t, Rng& noise_rng, bool drop_condition,
                        std::vector<double>* grad_base, std::vector<double>* grad_cond) {
    const auto& cfg = model.cfg;
    const int C = cfg.channels;
    if (x0_lr_rolled.rank() != 3 || x0_lr_rolled.dim(0) != cfg.base_res ||
        x0_lr_rolled.dim(1) != 3 * cfg.base_res || x0_lr_rolled.dim(2) != C)
        throw std::invalid_argument("base_loss: x0 resolution mismatch");

    auto [xt, eps] = forward_diffuse(x0_lr_rolled, t, cfg.base_sched, noise_rng);

    Tape tape;
    const bool want_grads = grad_base || grad_cond;
    BoundParams bp = want_grads ? bind_params(tape, model.base.params())
                                : BoundParams{};
    if (!want_grads) {
        for (const auto& e : model.base.params().entries) bp.vars.push_back(tape.input(e.value, false));
    }
    BoundParams bc;
    if (want_grads)
        bc = bind_params(tape, model.cond);
    else
        for (const auto& e : model.cond.entries) bc.vars.push_back(tape.input(e.value, false));

    DenoiserCondition cond;
    Tensor prepped;
    if (portrait != nullptr && !drop_condition) {
        prepped = prep_portrait(*portrait, cfg.cond_res);
        cond = portrait_condition_vars(tape, model, prepped, bc);
    } else {
        cond = null_condition_vars(tape, model, bc);
    }

    Var x = tape.constant(xt);
    Var out = model.base.forward(tape, x, t, 0.0, cond, bp);

    DiffusionLoss result;
    Var eps_hat = cfg.learned_variance ? tape.slice_last(out, 0, C) : out;
    Var loss = tape.mse(eps_hat, eps);
    result.simple = tape.scalar_value(loss);

    const double dt = 1.0 / cfg.base_train_steps;
    if (cfg.learned_variance && cfg.vlb_weight > 0.0 && t >= dt) {
        const double gi = gamma_of(cfg.base_sched, t);
        const double gim1 = gamma_of(cfg.base_sched, t - dt);
        const double beta = 1.0 - gi / gim1;
        const double beta_tilde = (1.0 - gim1) / (1.0 - gi) * beta;
        const double sig_i = std::sqrt(1.0 - gi);
        const double log_beta = std::log(beta), log_bt = std::log(beta_tilde);

        // posterior q(x_{t-dt} | x_t, x0)
        Tensor mu_q(xt.shape);
        {
            const double c0 = std::sqrt(gim1) * beta / (1.0 - gi);
            const double c1 = std::sqrt(gi / gim1) * (1.0 - gim1) / (1.0 - gi);
            for (int64_t i = 0; i < mu_q.numel(); ++i)
                mu_q[i] = c0 * x0_lr_rolled[i] + c1 * xt[i];
        }
        // p mean from the frozen (stop-gradient) epsilon prediction
        Var mu_p = tape.scale(
            tape.sub(x, tape.scale(tape.detach(eps_hat), beta / sig_i)), 1.0 / std::sqrt(1.0 - beta));
        Var v = tape.slice_last(out, C, 2 * C);
        Var frac = tape.scale(tape.add_scalar(v, 1.0), 0.5);
        Var log_var = tape.add_scalar(tape.scale(frac, log_beta - log_bt), log_bt);

        Var diff = tape.sub(mu_p, tape.constant(mu_q));
        Var quad = tape.add_scalar(tape.mul(diff, diff), beta_tilde);  // sigma_q^2 + (mu diff)^2
        Var inv_var = tape.exp_elem(tape.scale(log_var, -1.0));
        Var kl = tape.add_scalar(
            tape.add(tape.scale(log_var, 0.5), tape.scale(tape.mul(quad, inv_var), 0.5)),
            -0.5 * log_bt - 0.5);
        Var vlb = tape.mean_all(kl);
        result.vlb = tape.scalar_value(vlb);
        loss = tape.add(loss, tape.scale(vlb, cfg.vlb_weight));
    }

    result.total = tape.scalar_value(loss);
    if (!std::isfinite(result.total)) throw DivergenceError("base_loss: non-finite loss");
    if (want_grads) {
        tape.backward(loss);
        if (grad_base) accumulate_param_grads(tape, bp, model.base.params(), *grad_base);
        if (grad_cond) accumulate_param_grads(tape, bc, model.cond, *grad_cond);
    }
    return result;
}

PerceptualProxy PerceptualProxy::make(uint64_t seed, int in_channels) {
    PerceptualProxy p;
    Rng rng(seed);
    const int chans[4] = {in_channels, 8, 16, 32};
    for (int l = 0; l < 3; ++l) {
        const int cin = chans[l], cout = chans[l + 1];
        Tensor w({cout, cin, 3, 3});
        for (double& x : w.v) x = rng.normal();
        // Gram-Schmidt over the flattened filters: rows become orthonormal
        const int width = cin * 9;
        for (int o = 0; o < cout; ++o) {
            double* row = &w.v[static_cast<size_t>(o) * width];
            for (int p2 = 0; p2 < o; ++p2) {
                const double* prev = &w.v[static_cast<size_t>(p2) * width];
                double dot = 0;
                for (int i = 0; i < width; ++i) dot += row[i] * prev[i];
                for (int i = 0; i < width; ++i) row[i] -= dot * prev[i];
            }
            double nrm = 0;
            for (int i = 0; i < width; ++i) nrm += row[i] * row[i];
            nrm = std::sqrt(nrm);
            for (int i = 0; i < width; ++i) row[i] /= nrm;
        }
        p.filters.push_back(std::move(w));
    }
    return p;
}

double PerceptualProxy::loss_and_grad(const Tensor& a, const Tensor& b, Tensor* grad_a) const {
    if (a.shape != b.shape) throw std::invalid_argument("perceptual: shape mismatch");
    // reference features of b
    std::vector<Tensor> feats_b;
    {
        Tape t;
        Var h = t.input(b, false);
        for (const auto& f : filters) {
            h = t.conv2d(h, t.constant(f), t.constant(Tensor({f.dim(0)})), 2);
            feats_b.push_back(t.value(h));
            h = t.silu(h);
        }
    }
    Tape tape;
    Var in = tape.input(a, grad_a != nullptr);
    Var h = in;
    Var loss{};
    for (size_t l = 0; l < filters.size(); ++l) {
        const auto& f = filters[l];
        h = tape.conv2d(h, tape.constant(f), tape.constant(Tensor({f.dim(0)})), 2);
        Var term = tape.mse(h, feats_b[l]);
        loss = l == 0 ? term : tape.add(loss, term);
        h = tape.silu(h);
    }
    const double value = tape.scalar_value(loss);
    if (grad_a) {
        tape.backward(loss);
        *grad_a = tape.grad(in);
        if (grad_a->numel() == 0) *grad_a = Tensor(a.shape);
    }
    return value;
}

Tensor cond_augment(const Tensor& lr_rolled, double s, const NoiseSchedule& base_sched, Rng& rng) {
    if (s < 0.0 || s > 1.0) throw std::invalid_argument("cond_augment: level outside [0,1]");
    if (s == 0.0) return lr_rolled;
    auto [xt, eps] = forward_diffuse(lr_rolled, s, base_sched, rng);
    return xt;
}

DiffusionLoss upsample_loss(CascadeModel& model, const Tensor& x0_hr_rolled,
                            const Tensor& lr_cond_rolled, const Tensor* portrait, double t,
                            double aug_level, Rng& noise_rng, Rng& aug_rng, Rng& patch_rng,
                            bool drop_condition, const UpsampleLossContext& ctx,
                            std::vector<double>* grad_up, std::vector<double>* grad_cond) {
    const auto& cfg = model.cfg;
    const int C = cfg.channels;
    if (x0_hr_rolled.dim(0) != cfg.hr_res || x0_hr_rolled.dim(2) != C)
        throw std::invalid_argument("upsample_loss: x0 resolution mismatch");
    if (cfg.w_img > 0.0 && (ctx.frozen_decoder == nullptr || ctx.views == nullptr ||
                            ctx.perceptual == nullptr))
        throw std::invalid_argument("upsample_loss: renderer context required when w_img > 0");

    const Tensor augmented = cond_augment(lr_cond_rolled, aug_level, cfg.base_sched, aug_rng);
    const Tensor lr_up = upsample_rolled_bilinear(augmented, cfg.hr_res);
    auto [xt, eps] = forward_diffuse(x0_hr_rolled, t, cfg.up_sched, noise_rng);

    Tensor input({cfg.hr_res, 3 * cfg.hr_res, 2 * C});
    for (int i = 0; i < cfg.hr_res; ++i)
        for (int j = 0; j < 3 * cfg.hr_res; ++j) {
            for (int c = 0; c < C; ++c) input.at(i, j, c) = xt.at(i, j, c);
            for (int c = 0; c < C; ++c) input.at(i, j, C + c) = lr_up.at(i, j, c);
        }

    Tape tape;
    const bool want_grads = grad_up || grad_cond;
    BoundParams bp, bc;
    if (want_grads) {
        bp = bind_params(tape, model.upsample.params());
        bc = bind_params(tape, model.cond);
    } else {
        for (const auto& e : model.upsample.params().entries) bp.vars.push_back(tape.input(e.value, false));
        for (const auto& e : model.cond.entries) bc.vars.push_back(tape.input(e.value, false));
    }

    DenoiserCondition cond;
    Tensor prepped;
    if (portrait != nullptr && !drop_condition) {
        prepped = prep_portrait(*portrait, cfg.cond_res);
        cond = portrait_condition_vars(tape, model, prepped, bc);
    } else {
        cond = null_condition_vars(tape, model, bc);
    }

    Var xhat;
    if (ctx.inject_xhat != nullptr) {
        if (ctx.inject_xhat->shape != x0_hr_rolled.shape)
            throw std::invalid_argument("upsample_loss: injected prediction shape mismatch");
        xhat = tape.input(*ctx.inject_xhat, ctx.inject_grad != nullptr);
    } else {
        xhat = model.upsample.forward(tape, tape.constant(input), t, aug_level, cond, bp);
    }
    Var loss = tape.mse(xhat, x0_hr_rolled);

    DiffusionLoss result;
    result.simple = tape.scalar_value(loss);

    std::vector<std::pair<Var, Tensor>> extra;
    if (cfg.w_img > 0.0) {
        // render a random ground-truth patch through the frozen decoder
        const Triplane xhat_tp = unroll_tensor(tape.value(xhat), cfg.extent);
        const auto train = ctx.views->train_indices();
        const View& view =
            ctx.views->views[static_cast<size_t>(train[static_cast<size_t>(
                patch_rng.uniform_int(0, static_cast<int>(train.size()) - 1))])];
        const int P = std::min(cfg.image_patch, view.cam.width);
        const int ox = patch_rng.uniform_int(0, view.cam.width - P);
        const int oy = patch_rng.uniform_int(0, view.cam.height - P);
        std::vector<std::array<int, 2>> pixels;
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x) pixels.push_back({ox + x, oy + y});
        RayBatch rays = generate_rays(view.cam, pixels);

        RenderSettings rs;
        rs.n_samples = cfg.image_patch_samples;
        auto render = render_rays(xhat_tp, *ctx.frozen_decoder, rays, nullptr, rs);

        std::vector<Rgba> targets(pixels.size());
        for (size_t i = 0; i < pixels.size(); ++i)
            for (int c = 0; c < 4; ++c)
                targets[i][c] = view.image.at(pixels[i][1], pixels[i][0], c);

        std::vector<Rgba> grad_pred(pixels.size());
        result.image_pixel = render_loss(render.rgba, targets, grad_pred);

        // perceptual proxy on the patch images
        Tensor pred_img({P, P, 4}), gt_img({P, P, 4});
        for (size_t i = 0; i < pixels.size(); ++i)
            for (int c = 0; c < 4; ++c) {
                pred_img.at(static_cast<int>(i) / P, static_cast<int>(i) % P, c) = render.rgba[i][c];
                gt_img.at(static_cast<int>(i) / P, static_cast<int>(i) % P, c) = targets[i][c];
            }
        Tensor grad_img;
        result.image_perc = ctx.perceptual->loss_and_grad(pred_img, gt_img, &grad_img);
        for (size_t i = 0; i < pixels.size(); ++i)
            for (int c = 0; c < 4; ++c)
                grad_pred[i][c] += grad_img.at(static_cast<int>(i) / P, static_cast<int>(i) % P, c);

        if (want_grads) {
            TriplaneGrads g_tp(xhat_tp);
            render_backward(*render.cache, xhat_tp, *ctx.frozen_decoder, grad_pred, g_tp, {});
            Tensor rolled_grad({cfg.hr_res, 3 * cfg.hr_res, C});
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < cfg.hr_res; ++i)
                    for (int j = 0; j < cfg.hr_res; ++j)
                        for (int c = 0; c < C; ++c)
                            rolled_grad.at(i, k * cfg.hr_res + j, c) =
                                cfg.w_img * g_tp.planes[k].at(i, j, c);
            extra.emplace_back(xhat, std::move(rolled_grad));
        }
    }

    result.total = result.simple + cfg.w_img * (result.image_pixel + result.image_perc);
    if (!std::isfinite(result.total)) throw DivergenceError("upsample_loss: non-finite loss");
    if (want_grads || (ctx.inject_xhat && ctx.inject_grad)) {
        tape.backward(loss, extra);
        if (grad_up) accumulate_param_grads(tape, bp, model.upsample.params(), *grad_up);
        if (grad_cond) accumulate_param_grads(tape, bc, model.cond, *grad_cond);
        if (ctx.inject_xhat && ctx.inject_grad) {
            *ctx.inject_grad = tape.grad(xhat);
            if (ctx.inject_grad->numel() == 0) *ctx.inject_grad = Tensor(x0_hr_rolled.shape);
        }
    }
    return result;
}

Tensor ddpm_sample(const ModelFn& cond_model, const ModelFn* uncond_model,
                   const NoiseSchedule& sched, const SamplerConfig& cfg,
                   const std::vector<int>& shape, Rng& rng) {
    if (cfg.steps < 1) throw std::invalid_argument("ddpm_sample: steps must be >= 1");
    const int N = cfg.steps;
    Tensor x(shape);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

    const int C = shape.back();
    for (int i = N; i >= 1; --i) {
        const double ti = static_cast<double>(i) / N;
        const double tim1 = static_cast<double>(i - 1) / N;
        const double gi = gamma_of(sched, ti);
        const double gim1 = gamma_of(sched, tim1);
        const double alpha_i = std::sqrt(gi), sigma_i = std::sqrt(1.0 - gi);
        const double beta = 1.0 - gi / gim1;
        const double beta_tilde = (1.0 - gim1) / (1.0 - gi) * beta;

        Tensor out = cond_model(x, ti);
        Tensor model_mean(shape);  // epsilon-hat or x0-hat, per parameterization
        const bool has_var = cfg.learned_variance;
        if (has_var) {
            if (out.dim(out.rank() - 1) != 2 * C)
                throw std::invalid_argument("ddpm_sample: expected 2C channels for learned variance");
        } else if (out.shape != shape) {
            throw std::invalid_argument("ddpm_sample: model output shape mismatch");
        }
        auto split_mean = [&](const Tensor& o, Tensor& mean) {
            if (!has_var) {
                mean = o;
                return;
            }
            mean = Tensor(shape);
            const int64_t rows = mean.numel() / C;
            for (int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < C; ++c) mean[r * C + c] = o[r * 2 * C + c];
        };
        split_mean(out, model_mean);

        if (uncond_model != nullptr && cfg.guidance != 0.0) {
            Tensor uout = (*uncond_model)(x, ti);
            Tensor umean(shape);
            split_mean(uout, umean);
            for (int64_t j = 0; j < model_mean.numel(); ++j)
                model_mean[j] = (1.0 + cfg.guidance) * model_mean[j] - cfg.guidance * umean[j];
        }

        Tensor x0_hat(shape);
        if (cfg.x0_parameterization) {
            x0_hat = model_mean;
        } else {
            for (int64_t j = 0; j < x.numel(); ++j)
                x0_hat[j] = (x[j] - sigma_i * model_mean[j]) / alpha_i;
        }

        if (i == 1) {
            x = x0_hat;  // final step is noiseless
        } else {
            const double c0 = std::sqrt(gim1) * beta / (1.0 - gi);
            const double c1 = std::sqrt(gi / gim1) * (1.0 - gim1) / (1.0 - gi);
            const double log_beta = std::log(beta), log_bt = std::log(beta_tilde);
            for (int64_t j = 0; j < x.numel(); ++j) {
                const double mu = c0 * x0_hat[j] + c1 * x[j];
                double log_var = log_bt;
                if (has_var) {
                    const double v = out[(j / C) * 2 * C + C + (j % C)];
                    const double frac = 0.5 * (v + 1.0);
                    log_var = frac * log_beta + (1.0 - frac) * log_bt;
                }
                x[j] = mu + std::exp(0.5 * log_var) * rng.normal();
            }
        }
        if (!all_finite(x)) throw DivergenceError("ddpm_sample: non-finite intermediate");
    }
    return x;
}

namespace {

// Forward-only model closures for sampling.
ModelFn make_base_fn(const CascadeModel& model, const MultiScaleFeatures* cond_feats) {
    return [&model, cond_feats](const Tensor& x, double t) {
        Tape tape;
        BoundParams bp;
        for (const auto& e : model.base.params().entries) bp.vars.push_back(tape.input(e.value, false));
        DenoiserCondition cond;
        if (cond_feats) {
            cond.y1 = tape.constant(cond_feats->y1);
            cond.y2 = tape.constant(cond_feats->y2);
            cond.y3 = tape.constant(cond_feats->y3);
        } else {
            BoundParams bc;
            for (const auto& e : model.cond.entries) bc.vars.push_back(tape.input(e.value, false));
            cond = null_condition_vars(tape, model, bc);
        }
        Var out = model.base.forward(tape, tape.constant(x), t, 0.0, cond, bp);
        return tape.value(out);
    };
}

ModelFn make_upsample_fn(const CascadeModel& model, const Tensor& lr_up,
                         const MultiScaleFeatures* cond_feats, double aug_level) {
    return [&model, lr_up, cond_feats, aug_level](const Tensor& x, double t) {
        const int C = model.cfg.channels;
        Tensor input({x.dim(0), x.dim(1), 2 * C});
        for (int i = 0; i < x.dim(0); ++i)
            for (int j = 0; j < x.dim(1); ++j) {
                for (int c = 0; c < C; ++c) input.at(i, j, c) = x.at(i, j, c);
                for (int c = 0; c < C; ++c) input.at(i, j, C + c) = lr_up.at(i, j, c);
            }
        Tape tape;
        BoundParams bp;
        for (const auto& e : model.upsample.params().entries)
            bp.vars.push_back(tape.input(e.value, false));
        DenoiserCondition cond;
        if (cond_feats) {
            cond.y1 = tape.constant(cond_feats->y1);
            cond.y2 = tape.constant(cond_feats->y2);
            cond.y3 = tape.constant(cond_feats->y3);
        } else {
            BoundParams bc;
            for (const auto& e : model.cond.entries) bc.vars.push_back(tape.input(e.value, false));
            cond = null_condition_vars(tape, model, bc);
        }
        Var out = model.upsample.forward(tape, tape.constant(input), t, aug_level, cond, bp);
        return tape.value(out);
    };
}

MultiScaleFeatures null_condition_values(const CascadeModel& model) {
    NullTokens nt;
    nt.e1 = model.cond.entries[static_cast<size_t>(model.null1)].value;
    nt.e2 = model.cond.entries[static_cast<size_t>(model.null2)].value;
    nt.e3 = model.cond.entries[static_cast<size_t>(model.null3)].value;
    return null_condition(nt, model.cfg.cond_res, model.cfg.cond_res);
}

}  // namespace

GenerateResult generate(const CascadeModel& model, const DecoderParams& frozen_decoder,
                        const Tensor* portrait, const GenerateConfig& gc, const RngPool& pool) {
    const auto& cfg = model.cfg;
    GenerateResult res;

    MultiScaleFeatures cond_feats;
    const MultiScaleFeatures* cond_ptr = nullptr;
    if (portrait != nullptr) {
        Tensor prepped;
        {
            // reuse the training-path preprocessing
            Tape tmp;
            prepped = prep_portrait(*portrait, cfg.cond_res);
        }
        cond_feats = encode_values(prepped, model.cond, model.enc);
        cond_ptr = &cond_feats;
    }
    MultiScaleFeatures null_feats = null_condition_values(model);

    // base stage
    SamplerConfig base_cfg;
    base_cfg.steps = gc.steps;
    base_cfg.guidance = portrait ? gc.guidance : 0.0;
    base_cfg.x0_parameterization = false;
    base_cfg.learned_variance = cfg.learned_variance;
    ModelFn base_cond = make_base_fn(model, cond_ptr ? cond_ptr : &null_feats);
    ModelFn base_uncond = make_base_fn(model, &null_feats);
    Rng base_rng = pool.stream("base-sample");
    Tensor lr_rolled = ddpm_sample(base_cond, (portrait && gc.guidance != 0.0) ? &base_uncond : nullptr,
                                   cfg.base_sched, base_cfg,
                                   {cfg.base_res, 3 * cfg.base_res, cfg.channels}, base_rng);
    res.lr = unroll_tensor(lr_rolled, cfg.extent);

    // conditional augmentation at the inference level, then upsample stage
    Rng aug_rng = pool.stream("cond-aug");
    Tensor augmented = cond_augment(lr_rolled, cfg.cond_aug_infer, cfg.base_sched, aug_rng);
    Tensor lr_up = upsample_rolled_bilinear(augmented, cfg.hr_res);

    SamplerConfig up_cfg;
    up_cfg.steps = gc.steps;
    up_cfg.guidance = portrait ? gc.guidance : 0.0;
    up_cfg.x0_parameterization = true;
    up_cfg.learned_variance = false;
    ModelFn up_cond = make_upsample_fn(model, lr_up, cond_ptr ? cond_ptr : &null_feats,
                                       cfg.cond_aug_infer);
    ModelFn up_uncond = make_upsample_fn(model, lr_up, &null_feats, cfg.cond_aug_infer);
    Rng up_rng = pool.stream("up-sample");
    Tensor hr_rolled = ddpm_sample(up_cond, (portrait && gc.guidance != 0.0) ? &up_uncond : nullptr,
                                   cfg.up_sched, up_cfg,
                                   {cfg.hr_res, 3 * cfg.hr_res, cfg.channels}, up_rng);
    res.hr = unroll_tensor(hr_rolled, cfg.extent);

    // turntable renders; the occupancy grid of a generated triplane starts
    // from zero and is updated 16 times before rendering
    OccupancyGrid grid(32, cfg.extent);
    Rng occ_rng = pool.stream("occupancy");
    for (int i = 0; i < 16; ++i) update_occupancy(res.hr, frozen_decoder, grid, occ_rng);
    RenderSettings rs;
    rs.n_samples = gc.render_samples;
    for (int v = 0; v < gc.turntable_views; ++v) {
        const double az = 2.0 * M_PI * v / gc.turntable_views;
        CameraConfig cam = make_orbit_camera(az, 0.2, gc.camera_radius * cfg.extent, gc.fov_y,
                                             gc.view_res);
        res.turntable.push_back(render_view(res.hr, frozen_decoder, cam, &grid, rs));
    }
    return res;
}

// ---- checkpoint container ----

namespace {

std::string denoiser_cfg_kv(const DenoiserConfig& c) {
    KvFile kv;
    kv.set("plane_height", static_cast<int64_t>(c.plane_height));
    kv.set("plane_width", static_cast<int64_t>(c.plane_width));
    kv.set("in_channels", static_cast<int64_t>(c.in_channels));
    kv.set("out_channels", static_cast<int64_t>(c.out_channels));
    kv.set("model_channels", static_cast<int64_t>(c.model_channels));
    std::string mult;
    for (int m : c.channel_mult) mult += (mult.empty() ? "" : ",") + std::to_string(m);
    kv.set("channel_mult", mult);
    kv.set("res_blocks", static_cast<int64_t>(c.res_blocks));
    kv.set("groups", static_cast<int64_t>(c.groups));
    kv.set("time_embed_dim", static_cast<int64_t>(c.time_embed_dim));
    kv.set("attn_width", static_cast<int64_t>(c.attn_width));
    kv.set("bottleneck_self_attention", static_cast<int64_t>(c.bottleneck_self_attention ? 1 : 0));
    kv.set("learned_variance", static_cast<int64_t>(c.learned_variance ? 1 : 0));
    kv.set("exchange_layers", static_cast<int64_t>(c.exchange_layers ? 1 : 0));
    std::string cross;
    for (int m : c.cross_attn_scale) cross += (cross.empty() ? "" : ",") + std::to_string(m);
    kv.set("cross_attn_scale", cross);
    kv.set("bottleneck_cross_scale", static_cast<int64_t>(c.bottleneck_cross_scale));
    kv.set("cond_patch_size", static_cast<int64_t>(c.cond_patch_size));
    kv.set("cond_base_channels", static_cast<int64_t>(c.cond_base_channels));
    return kv.to_text();
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

DenoiserConfig denoiser_cfg_from_kv(const std::string& text) {
    KvFile kv = KvFile::parse_text(text);
    DenoiserConfig c;
    c.plane_height = static_cast<int>(kv.get_int("plane_height"));
    c.plane_width = static_cast<int>(kv.get_int("plane_width"));
    c.in_channels = static_cast<int>(kv.get_int("in_channels"));
    c.out_channels = static_cast<int>(kv.get_int("out_channels"));
    c.model_channels = static_cast<int>(kv.get_int("model_channels"));
    c.channel_mult = parse_int_list(kv.get_string("channel_mult"));
    c.res_blocks = static_cast<int>(kv.get_int("res_blocks"));
    c.groups = static_cast<int>(kv.get_int("groups"));
    c.time_embed_dim = static_cast<int>(kv.get_int("time_embed_dim"));
    c.attn_width = static_cast<int>(kv.get_int("attn_width"));
    c.bottleneck_self_attention = kv.get_int("bottleneck_self_attention") != 0;
    c.learned_variance = kv.get_int("learned_variance") != 0;
    c.exchange_layers = kv.get_int("exchange_layers") != 0;
    c.cross_attn_scale = parse_int_list(kv.get_string("cross_attn_scale"));
    c.bottleneck_cross_scale = static_cast<int>(kv.get_int("bottleneck_cross_scale"));
    c.cond_patch_size = static_cast<int>(kv.get_int("cond_patch_size"));
    c.cond_base_channels = static_cast<int>(kv.get_int("cond_base_channels"));
    return c;
}

std::string cascade_cfg_kv(const CascadeConfig& c) {
    KvFile kv;
    kv.set("channels", static_cast<int64_t>(c.channels));
    kv.set("base_res", static_cast<int64_t>(c.base_res));
    kv.set("hr_res", static_cast<int64_t>(c.hr_res));
    kv.set("cond_res", static_cast<int64_t>(c.cond_res));
    kv.set("cond_base_channels", static_cast<int64_t>(c.cond_base_channels));
    kv.set("extent", c.extent);
    kv.set("base_train_steps", static_cast<int64_t>(c.base_train_steps));
    kv.set("up_train_steps", static_cast<int64_t>(c.up_train_steps));
    kv.set("base_model_channels", static_cast<int64_t>(c.base_model_channels));
    std::string bm;
    for (int m : c.base_mult) bm += (bm.empty() ? "" : ",") + std::to_string(m);
    kv.set("base_mult", bm);
    kv.set("base_res_blocks", static_cast<int64_t>(c.base_res_blocks));
    kv.set("up_model_channels", static_cast<int64_t>(c.up_model_channels));
    std::string um;
    for (int m : c.up_mult) um += (um.empty() ? "" : ",") + std::to_string(m);
    kv.set("up_mult", um);
    kv.set("up_res_blocks", static_cast<int64_t>(c.up_res_blocks));
    kv.set("groups", static_cast<int64_t>(c.groups));
    kv.set("attn_width", static_cast<int64_t>(c.attn_width));
    kv.set("patch_size", static_cast<int64_t>(c.patch_size));
    kv.set("learned_variance", static_cast<int64_t>(c.learned_variance ? 1 : 0));
    kv.set("vlb_weight", c.vlb_weight);
    kv.set("w_img", c.w_img);
    kv.set("image_patch", static_cast<int64_t>(c.image_patch));
    kv.set("image_patch_samples", static_cast<int64_t>(c.image_patch_samples));
    kv.set("cond_dropout", c.cond_dropout);
    kv.set("cond_aug_max", c.cond_aug_max);
    kv.set("cond_aug_infer", c.cond_aug_infer);
    kv.set("perceptual_seed", static_cast<int64_t>(c.perceptual_seed));
    return kv.to_text();
}

CascadeConfig cascade_cfg_from_kv(const std::string& text) {
    KvFile kv = KvFile::parse_text(text);
    CascadeConfig c;
    c.channels = static_cast<int>(kv.get_int("channels"));
    c.base_res = static_cast<int>(kv.get_int("base_res"));
    c.hr_res = static_cast<int>(kv.get_int("hr_res"));
    c.cond_res = static_cast<int>(kv.get_int("cond_res"));
    c.cond_base_channels = static_cast<int>(kv.get_int("cond_base_channels"));
    c.extent = kv.get_double("extent");
    c.base_train_steps = static_cast<int>(kv.get_int("base_train_steps"));
    c.up_train_steps = static_cast<int>(kv.get_int("up_train_steps"));
    c.base_model_channels = static_cast<int>(kv.get_int("base_model_channels"));
    c.base_mult = parse_int_list(kv.get_string("base_mult"));
    c.base_res_blocks = static_cast<int>(kv.get_int("base_res_blocks"));
    c.up_model_channels = static_cast<int>(kv.get_int("up_model_channels"));
    c.up_mult = parse_int_list(kv.get_string("up_mult"));
    c.up_res_blocks = static_cast<int>(kv.get_int("up_res_blocks"));
    c.groups = static_cast<int>(kv.get_int("groups"));
    c.attn_width = static_cast<int>(kv.get_int("attn_width"));
    c.patch_size = static_cast<int>(kv.get_int("patch_size"));
    c.learned_variance = kv.get_int("learned_variance") != 0;
    c.vlb_weight = kv.get_double("vlb_weight");
    c.w_img = kv.get_double("w_img");
    c.image_patch = static_cast<int>(kv.get_int("image_patch"));
    c.image_patch_samples = static_cast<int>(kv.get_int("image_patch_samples"));
    c.cond_dropout = kv.get_double("cond_dropout");
    c.cond_aug_max = kv.get_double("cond_aug_max");
    c.cond_aug_infer = kv.get_double("cond_aug_infer");
    c.perceptual_seed = static_cast<uint64_t>(kv.get_int("perceptual_seed"));
    return c;
}

void write_section(BinWriter& w, const std::string& tag, const std::string& payload) {
    w.str(tag);
    w.u64(payload.size());
    w.bytes(payload.data(), payload.size());
}

void write_schedule(BinWriter& w, const NoiseSchedule& s, int steps) {
    w.u32(static_cast<uint32_t>(s.kind));
    w.f64(s.start);
    w.f64(s.end);
    w.f64(s.tau);
    w.u32(static_cast<uint32_t>(steps));
}

NoiseSchedule read_schedule(BinReader& r, int& steps) {
    NoiseSchedule s;
    s.kind = static_cast<ScheduleKind>(r.u32());
    s.start = r.f64();
    s.end = r.f64();
    s.tau = r.f64();
    steps = static_cast<int>(r.u32());
    return s;
}

std::string serialize_params(const ParamStore& store) {
    std::ostringstream ss;
    BinWriter w(ss);
    write_param_store(w, store);
    return ss.str();
}

void validate_same_layout(const ParamStore& expect, const ParamStore& got, const char* what) {
    if (expect.entries.size() != got.entries.size())
        throw IoError(std::string("cascade checkpoint: entry count mismatch in ") + what);
    for (size_t i = 0; i < expect.entries.size(); ++i) {
        if (expect.entries[i].name != got.entries[i].name ||
            expect.entries[i].value.shape != got.entries[i].value.shape)
            throw IoError(std::string("cascade checkpoint: layout mismatch in ") + what + " at " +
                          expect.entries[i].name);
    }
}

}  // namespace

void save_cascade(const CascadeModel& model, const std::string& path) {
    if (model.cfg.base_sched.kind != ScheduleKind::cosine_adjusted ||
        model.cfg.up_sched.kind != ScheduleKind::sigmoid)
        throw std::invalid_argument(
            "cascade checkpoint: base must use the adjusted cosine schedule and the upsampler "
            "the sigmoid schedule");
    const std::string tmp = path + ".tmp";
    {
        BinWriter w(tmp);
        w.magic("CASC");
        w.u32(1);
        w.u32(6);
        write_section(w, "meta", cascade_cfg_kv(model.cfg));
        {
            std::ostringstream ss;
            BinWriter sw(ss);
            write_schedule(sw, model.cfg.base_sched, model.cfg.base_train_steps);
            write_section(w, "sched.base", ss.str());
        }
        {
            std::ostringstream ss;
            BinWriter sw(ss);
            write_schedule(sw, model.cfg.up_sched, model.cfg.up_train_steps);
            write_section(w, "sched.up", ss.str());
        }
        write_section(w, "cond", serialize_params(model.cond));
        {
            std::ostringstream ss;
            BinWriter sw(ss);
            sw.str(denoiser_cfg_kv(model.base.config()));
            write_param_store(sw, model.base.params());
            write_section(w, "denoiser.base", ss.str());
        }
        {
            std::ostringstream ss;
            BinWriter sw(ss);
            sw.str(denoiser_cfg_kv(model.upsample.config()));
            write_param_store(sw, model.upsample.params());
            write_section(w, "denoiser.up", ss.str());
        }
    }
    std::filesystem::rename(tmp, path);
}

CascadeModel load_cascade(const std::string& path) {
    BinReader r(path);
    r.expect_magic("CASC");
    if (r.u32() != 1) throw IoError("cascade checkpoint: unsupported version");
    const uint32_t n_sections = r.u32();

    std::optional<CascadeConfig> cfg;
    std::optional<ParamStore> cond, base_params, up_params;
    std::optional<DenoiserConfig> base_cfg, up_cfg;
    NoiseSchedule base_sched, up_sched;
    int base_steps = 0, up_steps = 0;
    bool have_base_sched = false, have_up_sched = false;

    for (uint32_t s = 0; s < n_sections; ++s) {
        const std::string tag = r.str();
        const uint64_t len = r.u64();
        std::string payload(len, '\0');
        if (len) r.bytes(payload.data(), len);
        std::istringstream ss(payload);
        BinReader pr(ss);
        if (tag == "meta") {
            cfg = cascade_cfg_from_kv(payload);
        } else if (tag == "sched.base") {
            base_sched = read_schedule(pr, base_steps);
            have_base_sched = true;
        } else if (tag == "sched.up") {
            up_sched = read_schedule(pr, up_steps);
            have_up_sched = true;
        } else if (tag == "cond") {
            cond = read_param_store(pr);
        } else if (tag == "denoiser.base") {
            base_cfg = denoiser_cfg_from_kv(pr.str());
            base_params = read_param_store(pr);
        } else if (tag == "denoiser.up") {
            up_cfg = denoiser_cfg_from_kv(pr.str());
            up_params = read_param_store(pr);
        } else {
            throw IoError("cascade checkpoint: unknown section tag " + tag);
        }
    }
    if (!cfg || !cond || !base_params || !up_params || !base_cfg || !up_cfg || !have_base_sched ||
        !have_up_sched)
        throw IoError("cascade checkpoint: missing sections");

    cfg->base_sched = base_sched;
    cfg->up_sched = up_sched;
    cfg->base_train_steps = base_steps;
    cfg->up_train_steps = up_steps;

    Rng dummy(0);
    CascadeModel model = make_cascade(*cfg, dummy);
    validate_same_layout(model.base.params(), *base_params, "denoiser.base");
    validate_same_layout(model.upsample.params(), *up_params, "denoiser.up");
    validate_same_layout(model.cond, *cond, "cond");
    model.base.params() = std::move(*base_params);
    model.upsample.params() = std::move(*up_params);
    model.cond = std::move(*cond);
    return model;
}

}  // namespace trifield
