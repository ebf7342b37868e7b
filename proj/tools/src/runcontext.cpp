// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "runcontext.hpp"

#include <system_error>

#include "trifield/errors.hpp"

namespace trifield::cli {

RunContext RunContext::create(const std::string& out_dir, const std::string& command,
                              KvFile config, uint64_t seed, int threads) {
    RunContext ctx;
    ctx.dir = out_dir;
    ctx.config = std::move(config);
    ctx.seed = seed;
    ctx.threads = threads;

    std::error_code ec;
    std::filesystem::create_directories(ctx.dir, ec);
    if (ec) throw IoError("cannot create run directory: " + out_dir + " (" + ec.message() + ")");

    ctx.config.save(ctx.path("config.kv"));

    KvFile manifest;
    manifest.set("command", command);
    manifest.set("seed", static_cast<int64_t>(seed));
    manifest.set("threads", static_cast<int64_t>(threads));
    manifest.set("tool_version", std::string(kToolVersion));
    manifest.set("format_version", static_cast<int64_t>(1));
    manifest.save(ctx.path("manifest.kv"));
    return ctx;
}

KvFile load_config_or_default(const std::string& config_path) {
    if (config_path.empty()) return KvFile{};
    return KvFile::load(config_path);
}

}  // namespace trifield::cli
