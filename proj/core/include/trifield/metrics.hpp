// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "trifield/tensor.hpp"

namespace trifield {

// 10*log10(1/MSE) for images in [0,1]; identical images return +inf.
double psnr(const Tensor& a, const Tensor& b);

// Windowed SSIM on the grayscale conversion: 11x11 Gaussian window with
// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1. Images must be at
// least 11x11.
double ssim(const Tensor& a, const Tensor& b);

// One held-out PSNR measurement from stage-1 fitting.
struct HistoryRow {
    int outer_iter = 0;
    std::string scene_id;
    double heldout_psnr = 0.0;
};

struct ForgettingStat {
    std::string scene_id;
    double peak_psnr = 0.0;
    double final_psnr = 0.0;
    double forgetting = 0.0;  // peak - final
};

std::vector<ForgettingStat> forgetting_curve(const std::vector<HistoryRow>& history);

void save_history_csv(const std::vector<HistoryRow>& history, const std::string& path);
std::vector<HistoryRow> load_history_csv(const std::string& path);

}  // namespace trifield
