// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <span>
#include <string>
#include <vector>

#include "trifield/decoder.hpp"
#include "trifield/metrics.hpp"
#include "trifield/renderer.hpp"
#include "trifield/rng.hpp"
#include "trifield/scenegen.hpp"
#include "trifield/triplane.hpp"

namespace trifield {

// Adam with bias correction; one instance per parameter vector.
struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(std::span<double> params, std::span<const double> grad, double lr);
};

// Per-avatar consolidation state: Fisher diagonal and the weights recorded
// at the end of the avatar's previous visit. Empty until first visited, in
// which case the penalty vanishes.
struct FisherState {
    std::vector<double> omega;         // >= 0 elementwise
    std::vector<double> consolidated;  // same length as the flat decoder

    bool initialized() const { return !omega.empty(); }
};

// (lambda/2) * sum_i omega_i (w_i - w*_i)^2; gradient lambda*omega*(w - w*)
// is accumulated into grad (pass empty to skip).
double iwc_penalty(std::span<const double> params, const FisherState& state, double lambda,
                   std::span<double> grad);

// Sliding window over the last K data-loss gradients.
struct GradWindow {
    explicit GradWindow(int capacity) : capacity_(capacity) {}
    void push(const std::vector<double>& g);
    void clear() { grads_.clear(); }
    bool empty() const { return grads_.empty(); }
    std::vector<double> mean() const;

private:
    int capacity_;
    std::deque<std::vector<double>> grads_;
};

// Omega = (mean of the windowed data-loss gradients)^2, consolidated = the
// current weights. K = 1 reproduces the literal single-batch update.
void fisher_update(FisherState& state, const GradWindow& window,
                   std::span<const double> current_params);

// Mean of squared forward differences along both plane axes, all planes and
// channels; gradient (scaled by weight) is accumulated into grad.
double tv_loss(const Triplane& tp, TriplaneGrads* grad, double weight = 1.0);

// Plain sum of squares; gradient 2*weight*x accumulated into grad.
double l2_reg(const Triplane& tp, TriplaneGrads* grad, double weight = 1.0);

struct FittingConfig {
    int inner_iterations = 200;    // paper-scale 5000
    int outer_iterations = 10;     // visits per avatar; paper-scale 30
    double lambda_iwc = 0.1;
    double lambda_tv = 1e-2;
    double lambda_l2 = 1e-4;
    double lr_triplane = 2e-3;
    double lr_decoder = 2e-4;
    int ray_batch = 1024;          // paper-scale 8192
    int samples_per_ray = 64;      // paper-scale 1024
    int fisher_window = 8;         // K
    int stage2_iterations = 2000;  // paper-scale 25000

    int triplane_res = 64;
    int triplane_channels = 8;
    double triplane_init_std = 0.1;
    double extent = 1.0;

    bool use_occupancy = true;
    int grid_res = 32;
    double tau_occ = 1e-3;
    double grid_ema = 0.95;
    int grid_warmup_updates = 16;   // from zero initialization
    int grid_refresh_updates = 4;   // at the start of each revisit
    int grid_update_every = 16;     // inner steps between updates

    RenderSettings render_settings() const {
        RenderSettings rs;
        rs.n_samples = samples_per_ray;
        rs.jitter = true;
        return rs;
    }
};

// Adam over the three plane tensors with a shared step counter.
struct TriplaneAdam {
    std::array<Tensor, 3> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const Triplane& tp);
    void step(Triplane& tp, const TriplaneGrads& grad, double lr);
};

struct AvatarTask {
    std::string scene_id;
    const ViewDataset* data = nullptr;
    Triplane triplane;
    FisherState fisher;
    TriplaneAdam adam_triplane;
    OccupancyGrid grid;
    bool grid_warm = false;
};

AvatarTask make_task(const ViewDataset& data, const FittingConfig& cfg, Rng& init_rng);

// Replay orders: round_robin visits every task `visits` times interleaved;
// single_pass is the naive schedule (each task once, in order).
std::vector<int> round_robin_order(int n_tasks, int visits);
std::vector<int> single_pass_order(int n_tasks);

struct FitReport {
    std::vector<HistoryRow> history;       // held-out PSNR per task per outer iter
    std::vector<double> loss_trace;        // total loss per inner step
    std::vector<double> data_loss_trace;   // rendering loss per inner step
};

// Stage 1 (joint decoder + triplane fitting with task replay and IWC).
// `order` holds task indices, one entry per outer iteration; decoder and the
// tasks' triplanes/Fisher states are updated in place.
FitReport fit_stage1(std::vector<AvatarTask>& tasks, DecoderParams& decoder,
                     const FittingConfig& cfg, std::span<const int> order, const RngPool& pool);

// Stage 2: decoder frozen, triplane-only Adam fitting.
FitReport fit_stage2(const DecoderParams& decoder, AvatarTask& task, const FittingConfig& cfg,
                     const RngPool& pool);

// Mean held-out PSNR of a task under the given decoder.
double evaluate_heldout_psnr(const AvatarTask& task, const DecoderParams& decoder,
                             const FittingConfig& cfg);

}  // namespace trifield
