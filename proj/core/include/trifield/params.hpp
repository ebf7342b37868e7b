// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "trifield/ad.hpp"
#include "trifield/rng.hpp"
#include "trifield/serialize.hpp"
#include "trifield/tensor.hpp"

namespace trifield {

// Named parameter tensors owned by a model; rebound onto a fresh tape each
// training step. Flat order is entry order (canonical for Adam state).
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries;

    int add(const std::string& name, Tensor init) {
        entries.push_back({name, std::move(init)});
        return static_cast<int>(entries.size()) - 1;
    }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(static_cast<size_t>(count()));
        for (const auto& e : entries) out.insert(out.end(), e.value.v.begin(), e.value.v.end());
        return out;
    }

    void unflatten(std::span<const double> flat) {
        size_t off = 0;
        for (auto& e : entries) {
            std::copy(flat.begin() + off, flat.begin() + off + e.value.v.size(),
                      e.value.v.begin());
            off += e.value.v.size();
        }
    }
};

// Tape handles of every entry for one step.
struct BoundParams {
    std::vector<ad::Var> vars;
    ad::Var operator[](int i) const { return vars[static_cast<size_t>(i)]; }
};

inline BoundParams bind_params(ad::Tape& tape, const ParamStore& store) {
    BoundParams bp;
    bp.vars.reserve(store.entries.size());
    for (const auto& e : store.entries) bp.vars.push_back(tape.input(e.value, true));
    return bp;
}

// Accumulates d(loss)/d(entry) into a flat gradient vector (Adam layout).
inline void accumulate_param_grads(const ad::Tape& tape, const BoundParams& bp,
                                   const ParamStore& store, std::vector<double>& flat_grad) {
    size_t off = 0;
    for (size_t i = 0; i < store.entries.size(); ++i) {
        const Tensor& g = tape.grad(bp.vars[i]);
        const int64_t n = store.entries[i].value.numel();
        if (g.numel()) {
            for (int64_t j = 0; j < n; ++j) flat_grad[off + static_cast<size_t>(j)] += g[j];
        }
        off += static_cast<size_t>(n);
    }
}

// init helpers
inline Tensor gaussian_tensor(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = stddev * rng.normal();
    return t;
}

inline Tensor fanin_conv_init(int cout, int cin, int k, Rng& rng) {
    Tensor t({cout, cin, k, k});
    const double s = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    for (double& x : t.v) x = s * rng.normal();
    return t;
}

inline Tensor fanin_linear_init(int dout, int din, Rng& rng) {
    Tensor t({dout, din});
    const double s = 1.0 / std::sqrt(static_cast<double>(din));
    for (double& x : t.v) x = s * rng.normal();
    return t;
}

void write_param_store(BinWriter& w, const ParamStore& store);
ParamStore read_param_store(BinReader& r);

}  // namespace trifield
