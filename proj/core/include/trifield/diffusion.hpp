// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trifield/conditioning.hpp"
#include "trifield/decoder.hpp"
#include "trifield/denoiser.hpp"
#include "trifield/renderer.hpp"
#include "trifield/scenegen.hpp"
#include "trifield/schedule.hpp"
#include "trifield/triplane.hpp"

namespace trifield {

// Cascaded triplane diffusion: an epsilon-prediction base model at low
// resolution and an x0-prediction upsampler, both conditioned on portrait
// features; the base pairs with the adjusted cosine schedule and the
// upsampler with the sigmoid schedule.
struct CascadeConfig {
    int channels = 8;   // triplane C
    int base_res = 16;  // LR plane resolution
    int hr_res = 64;
    int cond_res = 64;  // portrait resize target
    int cond_base_channels = 8;
    double extent = 1.0;

    NoiseSchedule base_sched = NoiseSchedule::base_default();
    NoiseSchedule up_sched = NoiseSchedule::upsample_default();
    int base_train_steps = 1000;
    int up_train_steps = 100;

    int base_model_channels = 32;
    std::vector<int> base_mult = {1, 2, 4};
    int base_res_blocks = 2;
    int up_model_channels = 32;
    std::vector<int> up_mult = {1, 2, 4};
    int up_res_blocks = 2;
    int groups = 8;
    int attn_width = 32;
    int patch_size = 4;

    bool learned_variance = true;  // base model only
    double vlb_weight = 1e-3;
    double w_img = 0.1;
    int image_patch = 8;
    int image_patch_samples = 32;
    double cond_dropout = 0.2;
    double cond_aug_max = 0.5;
    double cond_aug_infer = 0.1;
    uint64_t perceptual_seed = 1234;
};

struct CascadeModel {
    CascadeConfig cfg;
    Denoiser base;
    Denoiser upsample;
    ParamStore cond;  // encoder convs + null tokens
    EncoderHandles enc;
    int null1 = -1, null2 = -1, null3 = -1;
};

CascadeModel make_cascade(const CascadeConfig& cfg, Rng& rng);

// Matches condition scales (y1, y2, y3) to denoiser stages by resolution;
// unmatched stages get no cross-attention.
std::vector<int> resolution_matched_scales(int input_height, int stages, int cond_res);

struct DiffusionLoss {
    double total = 0.0;
    double simple = 0.0;
    double vlb = 0.0;
    double image_pixel = 0.0;
    double image_perc = 0.0;
};

// Eq. 4 epsilon-prediction loss (plus the hybrid vlb term when the base
// model carries learned variance). Gradients are accumulated into the flat
// buffers when non-null; drop_condition selects the learned null tokens.
DiffusionLoss base_loss(CascadeModel& model, const Tensor& x0_lr_rolled, const Tensor* portrait,
                        double t, Rng& noise_rng, bool drop_condition,
                        std::vector<double>* grad_base, std::vector<double>* grad_cond);

// Fixed random-orthogonal conv pyramid standing in for a pretrained
// perceptual network; frozen at construction.
struct PerceptualProxy {
    std::vector<Tensor> filters;  // stride-2 conv stacks
    static PerceptualProxy make(uint64_t seed, int in_channels = 4);
    double loss_and_grad(const Tensor& a, const Tensor& b, Tensor* grad_a) const;
};

struct UpsampleLossContext {
    const DecoderParams* frozen_decoder = nullptr;  // required when w_img > 0
    const ViewDataset* views = nullptr;             // ground-truth patches
    const PerceptualProxy* perceptual = nullptr;
    // test mode: bypass the network and use this prediction as x-hat; its
    // gradient (including the through-renderer image term) lands in
    // inject_grad when non-null
    const Tensor* inject_xhat = nullptr;
    Tensor* inject_grad = nullptr;
};

// Eq. 5 x0-prediction loss with Eq. 6 image-level patch supervision; the
// image term back-propagates through the volumetric renderer into the
// predicted triplane.
DiffusionLoss upsample_loss(CascadeModel& model, const Tensor& x0_hr_rolled,
                            const Tensor& lr_cond_rolled, const Tensor* portrait, double t,
                            double aug_level, Rng& noise_rng, Rng& aug_rng, Rng& patch_rng,
                            bool drop_condition, const UpsampleLossContext& ctx,
                            std::vector<double>* grad_up, std::vector<double>* grad_cond);

// Conditional augmentation: noise the LR condition at level s via the base
// schedule (x_aug = alpha_s x + sigma_s eps).
Tensor cond_augment(const Tensor& lr_rolled, double s, const NoiseSchedule& base_sched, Rng& rng);

struct SamplerConfig {
    int steps = 10;
    double guidance = 1.0;  // w; epsilon_tilde = (1+w) cond - w uncond
    bool x0_parameterization = false;
    bool learned_variance = false;
};

using ModelFn = std::function<Tensor(const Tensor& x, double t)>;

// Ancestral DDPM over `steps` uniformly spaced times of the continuous
// schedule; the final step is noiseless (returns the predicted x0).
Tensor ddpm_sample(const ModelFn& cond_model, const ModelFn* uncond_model,
                   const NoiseSchedule& sched, const SamplerConfig& cfg,
                   const std::vector<int>& shape, Rng& rng);

struct GenerateConfig {
    int steps = 10;
    double guidance = 1.0;
    int turntable_views = 8;
    int view_res = 32;
    int render_samples = 48;
    double camera_radius = 2.7;
    double fov_y = 1.1;
};

struct GenerateResult {
    Triplane lr;
    Triplane hr;
    std::vector<Tensor> turntable;
};

// Full pipeline: base sample -> conditional augmentation at the inference
// level -> upsample sample -> turntable renders through the frozen decoder.
// Null portrait produces unconditional generation.
GenerateResult generate(const CascadeModel& model, const DecoderParams& frozen_decoder,
                        const Tensor* portrait, const GenerateConfig& gc, const RngPool& pool);

// Section-tagged checkpoint container (magic "CASC"), atomically written.
void save_cascade(const CascadeModel& model, const std::string& path);
CascadeModel load_cascade(const std::string& path);

// Rolled-tensor helpers shared by training and the CLI.
Tensor roll_triplane(const Triplane& tp);
Triplane unroll_tensor(const Tensor& rolled, double extent);
Tensor upsample_rolled_bilinear(const Tensor& lr_rolled, int hr_plane_res);
Tensor downsample_rolled_avg(const Tensor& hr_rolled, int lr_plane_res);

}  // namespace trifield
