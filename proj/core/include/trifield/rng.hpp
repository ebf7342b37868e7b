// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace trifield {

// mt19937_64 wrapper with hand-rolled distributions so streams are
// reproducible independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    // Box-Muller; caches the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// One global seed fans out to named sub-streams (data, init, noise, dropout,
// ...) so perturbing one stage's randomness does not shift the others.
class RngPool {
public:
    explicit RngPool(uint64_t seed) : seed_(seed) {}
    Rng stream(std::string_view name) const { return Rng(seed_ ^ fnv1a64(name)); }
    Rng stream(std::string_view name, uint64_t index) const {
        return Rng(seed_ ^ fnv1a64(name) ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    }
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
};

}  // namespace trifield
