// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "trifield/kv.hpp"

namespace trifield::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Run directory with the reproducibility contract: a config.kv snapshot and
// a manifest.kv (command, seed, versions) are written before any output.
struct RunContext {
    std::filesystem::path dir;
    KvFile config;
    uint64_t seed = 0;
    int threads = 1;

    static RunContext create(const std::string& out_dir, const std::string& command,
                             KvFile config, uint64_t seed, int threads);

    std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

// Loads --config if given, then applies explicit flag overrides on top.
KvFile load_config_or_default(const std::string& config_path);

}  // namespace trifield::cli
