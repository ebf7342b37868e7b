// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "trifield/errors.hpp"

namespace trifield {

static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

class BinWriter {
public:
    explicit BinWriter(const std::string& path)
        : path_(path), owned_(std::make_unique<std::ofstream>(path, std::ios::binary)),
          out_(owned_.get()) {
        if (!*owned_) throw IoError("cannot open for write: " + path);
    }
    explicit BinWriter(std::ostream& sink) : path_("<stream>"), out_(&sink) {}

    void bytes(const void* p, size_t n) {
        out_->write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!*out_) throw IoError("write failed: " + path_);
    }
    void magic(const char tag[4]) { bytes(tag, 4); }
    void u32(uint32_t x) { bytes(&x, 4); }
    void u64(uint64_t x) { bytes(&x, 8); }
    void f32(float x) { bytes(&x, 4); }
    void f64(double x) { bytes(&x, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    std::string path_;
    std::unique_ptr<std::ofstream> owned_;
    std::ostream* out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path)
        : path_(path), owned_(std::make_unique<std::ifstream>(path, std::ios::binary)),
          in_(owned_.get()) {
        if (!*owned_) throw IoError("cannot open for read: " + path);
    }
    explicit BinReader(std::istream& source) : path_("<stream>"), in_(&source) {}

    void bytes(void* p, size_t n) {
        in_->read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_->gcount()) != n)
            throw IoError("unexpected end of file: " + path_);
    }
    void expect_magic(const char tag[4]) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, tag, 4) != 0)
            throw IoError("bad magic in " + path_ + " (expected " + std::string(tag, 4) + ")");
    }
    uint32_t u32() {
        uint32_t x;
        bytes(&x, 4);
        return x;
    }
    uint64_t u64() {
        uint64_t x;
        bytes(&x, 8);
        return x;
    }
    float f32() {
        float x;
        bytes(&x, 4);
        return x;
    }
    double f64() {
        double x;
        bytes(&x, 8);
        return x;
    }
    std::string str() {
        uint32_t n = u32();
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }

private:
    std::string path_;
    std::unique_ptr<std::ifstream> owned_;
    std::istream* in_;
};

}  // namespace trifield
