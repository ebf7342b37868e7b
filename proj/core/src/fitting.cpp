// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/fitting.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/errors.hpp"

namespace trifield {

void AdamState::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (m.empty()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
    }
    if (params.size() != grad.size() || params.size() != m.size())
        throw std::invalid_argument("adam: size mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

void TriplaneAdam::init(const Triplane& tp) {
    for (int k = 0; k < 3; ++k) {
        m[k] = Tensor({tp.res, tp.res, tp.channels});
        v[k] = Tensor({tp.res, tp.res, tp.channels});
    }
    t = 0;
}

void TriplaneAdam::step(Triplane& tp, const TriplaneGrads& grad, double lr) {
    if (m[0].numel() == 0) init(tp);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (int k = 0; k < 3; ++k) {
        auto& pk = tp.planes[k];
        const auto& gk = grad.planes[k];
        for (int64_t i = 0; i < pk.numel(); ++i) {
            m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * gk[i];
            v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * gk[i] * gk[i];
            pk[i] -= lr * (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + eps);
        }
    }
}

double iwc_penalty(std::span<const double> params, const FisherState& state, double lambda,
                   std::span<double> grad) {
    if (!state.initialized()) return 0.0;
    if (params.size() != state.omega.size() || params.size() != state.consolidated.size())
        throw std::invalid_argument("iwc_penalty: shape mismatch");
    if (!grad.empty() && grad.size() != params.size())
        throw std::invalid_argument("iwc_penalty: grad shape mismatch");
    double value = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        const double om = state.omega[i];
        if (om < 0.0) throw std::invalid_argument("iwc_penalty: negative Fisher entry");
        const double d = params[i] - state.consolidated[i];
        value += om * d * d;
        if (!grad.empty()) grad[i] += lambda * om * d;
    }
    return 0.5 * lambda * value;
}

void GradWindow::push(const std::vector<double>& g) {
    grads_.push_back(g);
    while (static_cast<int>(grads_.size()) > capacity_) grads_.pop_front();
}

std::vector<double> GradWindow::mean() const {
    if (grads_.empty()) throw std::invalid_argument("GradWindow: empty");
    std::vector<double> out(grads_.front().size(), 0.0);
    for (const auto& g : grads_)
        for (size_t i = 0; i < out.size(); ++i) out[i] += g[i];
    const double inv = 1.0 / static_cast<double>(grads_.size());
    for (double& x : out) x *= inv;
    return out;
}

void fisher_update(FisherState& state, const GradWindow& window,
                   std::span<const double> current_params) {
    auto mean = window.mean();
    state.omega.resize(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) state.omega[i] = mean[i] * mean[i];
    state.consolidated.assign(current_params.begin(), current_params.end());
}

double tv_loss(const Triplane& tp, TriplaneGrads* grad, double weight) {
    const int H = tp.res, W = tp.res, C = tp.channels;
    const double n_diffs = 3.0 * C * (static_cast<double>(H) * (W - 1) + static_cast<double>(H - 1) * W);
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
        const auto& pl = tp.planes[k];
        Tensor* g = grad ? &grad->planes[k] : nullptr;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c) {
                    if (j + 1 < W) {
                        const double d = pl.at(i, j + 1, c) - pl.at(i, j, c);
                        total += d * d;
                        if (g) {
                            const double gd = weight * 2.0 * d / n_diffs;
                            g->at(i, j + 1, c) += gd;
                            g->at(i, j, c) -= gd;
                        }
                    }
                    if (i + 1 < H) {
                        const double d = pl.at(i + 1, j, c) - pl.at(i, j, c);
                        total += d * d;
                        if (g) {
                            const double gd = weight * 2.0 * d / n_diffs;
                            g->at(i + 1, j, c) += gd;
                            g->at(i, j, c) -= gd;
                        }
                    }
                }
    }
    return total / n_diffs;
}

double l2_reg(const Triplane& tp, TriplaneGrads* grad, double weight) {
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
        const auto& pl = tp.planes[k];
        for (int64_t i = 0; i < pl.numel(); ++i) {
            total += pl[i] * pl[i];
            if (grad) grad->planes[k][i] += weight * 2.0 * pl[i];
        }
    }
    return total;
}

AvatarTask make_task(const ViewDataset& data, const FittingConfig& cfg, Rng& init_rng) {
    AvatarTask task;
    task.scene_id = data.scene_id;
    task.data = &data;
    if (data.views.empty()) throw std::invalid_argument("make_task: empty dataset");
    task.triplane = Triplane(cfg.triplane_res, cfg.triplane_channels, cfg.extent);
    init_gaussian(task.triplane, init_rng, cfg.triplane_init_std);
    task.grid = OccupancyGrid(cfg.grid_res, cfg.extent, cfg.tau_occ, cfg.grid_ema);
    return task;
}

std::vector<int> round_robin_order(int n_tasks, int visits) {
    std::vector<int> order;
    for (int v = 0; v < visits; ++v)
        for (int s = 0; s < n_tasks; ++s) order.push_back(s);
    return order;
}

std::vector<int> single_pass_order(int n_tasks) { return round_robin_order(n_tasks, 1); }

namespace {

// One training batch: rays of a single random train view.
struct Batch {
    RayBatch rays;
    std::vector<Rgba> targets;
};

Batch sample_batch(const ViewDataset& data, int ray_count, Rng& rng) {
    const auto train = data.train_indices();
    const int vi = train[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(train.size()) - 1))];
    const View& view = data.views[static_cast<size_t>(vi)];
    std::vector<std::array<int, 2>> pixels(static_cast<size_t>(ray_count));
    for (auto& px : pixels) {
        px[0] = rng.uniform_int(0, view.cam.width - 1);
        px[1] = rng.uniform_int(0, view.cam.height - 1);
    }
    Batch b;
    b.rays = generate_rays(view.cam, pixels);
    b.targets.resize(pixels.size());
    for (size_t i = 0; i < pixels.size(); ++i)
        for (int c = 0; c < 4; ++c)
            b.targets[i][c] = view.image.at(pixels[i][1], pixels[i][0], c);
    return b;
}

void refresh_grid(AvatarTask& task, const DecoderParams& decoder, const FittingConfig& cfg,
                  const RngPool& pool, uint64_t& occ_counter) {
    if (!cfg.use_occupancy) return;
    const int n = task.grid_warm ? cfg.grid_refresh_updates : cfg.grid_warmup_updates;
    for (int i = 0; i < n; ++i) {
        Rng rng = pool.stream("occupancy", occ_counter++);
        update_occupancy(task.triplane, decoder, task.grid, rng);
    }
    task.grid_warm = true;
}

}  // namespace

double evaluate_heldout_psnr(const AvatarTask& task, const DecoderParams& decoder,
                             const FittingConfig& cfg) {
    const auto held = task.data->heldout_indices();
    if (held.empty()) throw std::invalid_argument("evaluate_heldout_psnr: no held-out views");
    RenderSettings rs;
    rs.n_samples = cfg.samples_per_ray;
    rs.jitter = false;
    double sum = 0.0;
    for (int vi : held) {
        const View& view = task.data->views[static_cast<size_t>(vi)];
        Tensor img = render_view(task.triplane, decoder, view.cam, nullptr, rs);
        sum += psnr(img, view.image);
    }
    return sum / static_cast<double>(held.size());
}

FitReport fit_stage1(std::vector<AvatarTask>& tasks, DecoderParams& decoder,
                     const FittingConfig& cfg, std::span<const int> order, const RngPool& pool) {
    if (tasks.empty()) throw std::invalid_argument("fit_stage1: no tasks");
    FitReport report;
    AdamState adam_decoder;
    std::vector<double> dec_flat = decoder.flatten();
    std::vector<double> g_data(dec_flat.size()), g_total(dec_flat.size());
    const RenderSettings rs = cfg.render_settings();

    uint64_t global_step = 0, occ_counter = 0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
        AvatarTask& task = tasks[static_cast<size_t>(order[oi])];
        refresh_grid(task, decoder, cfg, pool, occ_counter);
        GradWindow window(cfg.fisher_window);
        TriplaneGrads g_tp(task.triplane);

        for (int it = 0; it < cfg.inner_iterations; ++it, ++global_step) {
            Rng rray = pool.stream("rays", global_step);
            Batch batch = sample_batch(*task.data, cfg.ray_batch, rray);

            Rng rmarch = pool.stream("march", global_step);
            auto res = render_rays(task.triplane, decoder, batch.rays,
                                   cfg.use_occupancy ? &task.grid : nullptr, rs, &rmarch, true);
            std::vector<Rgba> grad_pred(batch.targets.size());
            const double loss_data = render_loss(res.rgba, batch.targets, grad_pred);

            g_tp.clear();
            std::fill(g_data.begin(), g_data.end(), 0.0);
            render_backward(*res.cache, task.triplane, decoder, grad_pred, g_tp, g_data);
            window.push(g_data);

            g_total = g_data;
            const double loss_iwc =
                iwc_penalty(dec_flat, task.fisher, cfg.lambda_iwc, g_total);
            const double loss_tv = cfg.lambda_tv * tv_loss(task.triplane, &g_tp, cfg.lambda_tv);
            const double loss_l2 = cfg.lambda_l2 * l2_reg(task.triplane, &g_tp, cfg.lambda_l2);
            const double loss = loss_data + loss_iwc + loss_tv + loss_l2;
            if (!std::isfinite(loss))
                throw DivergenceError("fit_stage1: non-finite loss at step " +
                                      std::to_string(global_step));
            report.loss_trace.push_back(loss);
            report.data_loss_trace.push_back(loss_data);

            task.adam_triplane.step(task.triplane, g_tp, cfg.lr_triplane);
            adam_decoder.step(dec_flat, g_total, cfg.lr_decoder);
            decoder.unflatten(dec_flat);

            if (cfg.use_occupancy && cfg.grid_update_every > 0 &&
                (it + 1) % cfg.grid_update_every == 0) {
                Rng rocc = pool.stream("occupancy", occ_counter++);
                update_occupancy(task.triplane, decoder, task.grid, rocc);
            }
        }

        fisher_update(task.fisher, window, dec_flat);

        for (const auto& t : tasks)
            report.history.push_back({static_cast<int>(oi), t.scene_id,
                                      evaluate_heldout_psnr(t, decoder, cfg)});
    }
    return report;
}

FitReport fit_stage2(const DecoderParams& decoder, AvatarTask& task, const FittingConfig& cfg,
                     const RngPool& pool) {
    FitReport report;
    const RenderSettings rs = cfg.render_settings();
    TriplaneGrads g_tp(task.triplane);

    uint64_t occ_counter = 0;
    if (cfg.use_occupancy && !task.grid_warm) {
        for (int i = 0; i < cfg.grid_warmup_updates; ++i) {
            Rng rng = pool.stream("s2occupancy", occ_counter++);
            update_occupancy(task.triplane, decoder, task.grid, rng);
        }
        task.grid_warm = true;
    }

    for (int it = 0; it < cfg.stage2_iterations; ++it) {
        Rng rray = pool.stream("s2rays", static_cast<uint64_t>(it));
        Batch batch = sample_batch(*task.data, cfg.ray_batch, rray);
        Rng rmarch = pool.stream("s2march", static_cast<uint64_t>(it));
        auto res = render_rays(task.triplane, decoder, batch.rays,
                               cfg.use_occupancy ? &task.grid : nullptr, rs, &rmarch, true);
        std::vector<Rgba> grad_pred(batch.targets.size());
        const double loss_data = render_loss(res.rgba, batch.targets, grad_pred);

        g_tp.clear();
        render_backward(*res.cache, task.triplane, decoder, grad_pred, g_tp, {});
        const double loss_tv = cfg.lambda_tv * tv_loss(task.triplane, &g_tp, cfg.lambda_tv);
        const double loss_l2 = cfg.lambda_l2 * l2_reg(task.triplane, &g_tp, cfg.lambda_l2);
        const double loss = loss_data + loss_tv + loss_l2;
        if (!std::isfinite(loss))
            throw DivergenceError("fit_stage2: non-finite loss at step " + std::to_string(it));
        report.loss_trace.push_back(loss);
        report.data_loss_trace.push_back(loss_data);

        task.adam_triplane.step(task.triplane, g_tp, cfg.lr_triplane);

        if (cfg.use_occupancy && cfg.grid_update_every > 0 &&
            (it + 1) % cfg.grid_update_every == 0) {
            Rng rocc = pool.stream("s2occupancy", occ_counter++);
            update_occupancy(task.triplane, decoder, task.grid, rocc);
        }
    }
    if (!task.data->heldout_indices().empty())
        report.history.push_back({0, task.scene_id, evaluate_heldout_psnr(task, decoder, cfg)});
    return report;
}

}  // namespace trifield
