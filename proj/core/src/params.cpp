// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/params.hpp"

namespace trifield {

void write_param_store(BinWriter& w, const ParamStore& store) {
    w.u32(static_cast<uint32_t>(store.entries.size()));
    for (const auto& e : store.entries) {
        w.str(e.name);
        w.u32(static_cast<uint32_t>(e.value.rank()));
        for (int d : e.value.shape) w.u32(static_cast<uint32_t>(d));
        for (double x : e.value.v) w.f64(x);
    }
}

ParamStore read_param_store(BinReader& r) {
    ParamStore store;
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        if (rank > 8) throw IoError("param store: implausible tensor rank");
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
        Tensor t(shape);
        for (double& x : t.v) x = r.f64();
        store.entries.push_back({name, std::move(t)});
    }
    return store;
}

}  // namespace trifield
