// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "trifield/tensor.hpp"

namespace trifield {

// Images are [H, W, C] tensors with values in [0, 1]; PNG I/O is 8-bit.

Tensor load_png_rgba(const std::string& path);          // always returns [H, W, 4]
void save_png_rgba(const Tensor& img, const std::string& path);  // C = 3 or 4

// P6 binary PPM; RGBA input is composited over white.
void save_ppm(const Tensor& img, const std::string& path);

// Nearest/bilinear helpers used by the conditioning path.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

}  // namespace trifield
