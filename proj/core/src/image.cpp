// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "trifield/errors.hpp"

namespace trifield {

namespace {

uint8_t to_byte(double x) {
    if (x <= 0.0) return 0;
    if (x >= 1.0) return 255;
    return static_cast<uint8_t>(std::lround(x * 255.0));
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

Tensor load_png_rgba(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open png: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_gray_to_rgb(png);
    png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * 4);
    Tensor img({h, w, 4});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 4; ++c)
                img.at(y, x, c) = row[static_cast<size_t>(x) * 4 + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void save_png_rgba(const Tensor& img, const std::string& path) {
    if (img.rank() != 3 || (img.dim(2) != 3 && img.dim(2) != 4))
        throw std::invalid_argument("save_png_rgba: expected [H,W,3] or [H,W,4]");
    const int h = img.dim(0), w = img.dim(1), C = img.dim(2);

    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open png for write: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * 4);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 4 + c] = to_byte(img.at(y, x, c));
            row[static_cast<size_t>(x) * 4 + 3] = C == 4 ? to_byte(img.at(y, x, 3)) : 255;
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_ppm(const Tensor& img, const std::string& path) {
    if (img.rank() != 3 || (img.dim(2) != 3 && img.dim(2) != 4))
        throw std::invalid_argument("save_ppm: expected [H,W,3] or [H,W,4]");
    const int h = img.dim(0), w = img.dim(1), C = img.dim(2);
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open ppm for write: " + path);
    std::fprintf(fp.get(), "P6\n%d %d\n255\n", w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double a = C == 4 ? img.at(y, x, 3) : 1.0;
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(y, x, c) * a + (1.0 - a);  // over white
                std::fputc(to_byte(v), fp.get());
            }
        }
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw std::invalid_argument("resize_bilinear: expected [H,W,C]");
    const int h = img.dim(0), w = img.dim(1), C = img.dim(2);
    Tensor out({out_h, out_w, C});
    for (int y = 0; y < out_h; ++y) {
        const double sy = out_h > 1 ? double(y) * (h - 1) / (out_h - 1) : 0.0;
        const int y0 = std::min(static_cast<int>(sy), h - 2 >= 0 ? h - 2 : 0);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = out_w > 1 ? double(x) * (w - 1) / (out_w - 1) : 0.0;
            const int x0 = std::min(static_cast<int>(sx), w - 2 >= 0 ? w - 2 : 0);
            const double fx = sx - x0;
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            for (int c = 0; c < C; ++c) {
                const double v = img.at(y0, x0, c) * (1 - fy) * (1 - fx) +
                                 img.at(y0, x1, c) * (1 - fy) * fx +
                                 img.at(y1, x0, c) * fy * (1 - fx) + img.at(y1, x1, c) * fy * fx;
                out.at(y, x, c) = v;
            }
        }
    }
    return out;
}

}  // namespace trifield
