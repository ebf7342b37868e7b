// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "trifield/errors.hpp"
#include "trifield/kv.hpp"

namespace trifield {

double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    if (a.numel() == 0) throw std::invalid_argument("psnr: empty images");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

// BT.601 luma; single-channel and 2-D images pass through.
Tensor to_gray(const Tensor& img) {
    if (img.rank() == 2) return img;
    if (img.rank() != 3) throw std::invalid_argument("ssim: expected [H,W] or [H,W,C] image");
    const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    Tensor g({H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            if (C == 1)
                g.at(i, j) = img.at(i, j, 0);
            else
                g.at(i, j) = 0.299 * img.at(i, j, 0) + 0.587 * img.at(i, j, 1) +
                             0.114 * img.at(i, j, 2);
        }
    return g;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    Tensor ga = to_gray(a), gb = to_gray(b);
    if (ga.shape != gb.shape) throw std::invalid_argument("ssim: shape mismatch");
    const int H = ga.dim(0), W = ga.dim(1);
    constexpr int win = 11;
    if (H < win || W < win) throw std::invalid_argument("ssim: image smaller than 11x11");

    double kernel[win][win];
    {
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
                const double di = i - (win - 1) / 2.0, dj = j - (win - 1) / 2.0;
                kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
                sum += kernel[i][j];
            }
        for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) kernel[i][j] /= sum;
    }

    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double acc = 0.0;
    int64_t n = 0;
    for (int y = 0; y + win <= H; ++y)
        for (int x = 0; x + win <= W; ++x) {
            double mx = 0, my = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    mx += kernel[i][j] * ga.at(y + i, x + j);
                    my += kernel[i][j] * gb.at(y + i, x + j);
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double dx = ga.at(y + i, x + j) - mx;
                    const double dy = gb.at(y + i, x + j) - my;
                    vx += kernel[i][j] * dx * dx;
                    vy += kernel[i][j] * dy * dy;
                    cxy += kernel[i][j] * dx * dy;
                }
            const double num = (2 * mx * my + C1) * (2 * cxy + C2);
            const double den = (mx * mx + my * my + C1) * (vx + vy + C2);
            acc += num / den;
            ++n;
        }
    return acc / static_cast<double>(n);
}

std::vector<ForgettingStat> forgetting_curve(const std::vector<HistoryRow>& history) {
    if (history.empty()) throw std::invalid_argument("forgetting_curve: empty history");
    // per scene, ordered by outer iteration
    std::map<std::string, std::map<int, double>> curves;
    for (const auto& row : history) curves[row.scene_id][row.outer_iter] = row.heldout_psnr;
    std::vector<ForgettingStat> out;
    for (const auto& [scene, curve] : curves) {
        ForgettingStat st;
        st.scene_id = scene;
        st.peak_psnr = -std::numeric_limits<double>::infinity();
        for (const auto& [it, p] : curve) {
            if (p > st.peak_psnr) st.peak_psnr = p;
            st.final_psnr = p;
        }
        st.forgetting = st.peak_psnr - st.final_psnr;
        out.push_back(std::move(st));
    }
    return out;
}

void save_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write history csv: " + path);
    f << "outer_iter,scene_id,heldout_psnr\n";
    for (const auto& r : history)
        f << r.outer_iter << ',' << r.scene_id << ',' << format_double(r.heldout_psnr) << '\n';
    if (!f) throw IoError("write failed: " + path);
}

std::vector<HistoryRow> load_history_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read history csv: " + path);
    std::vector<HistoryRow> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string it, scene, p;
        if (!std::getline(ss, it, ',') || !std::getline(ss, scene, ',') || !std::getline(ss, p))
            throw IoError("malformed history csv row: " + line);
        rows.push_back({std::stoi(it), scene, std::stod(p)});
    }
    return rows;
}

}  // namespace trifield
