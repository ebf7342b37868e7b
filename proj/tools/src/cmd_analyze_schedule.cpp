// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <memory>

#include "commands.hpp"
#include "runcontext.hpp"
#include "trifield/errors.hpp"
#include "trifield/kv.hpp"
#include "trifield/schedule.hpp"

namespace trifield::cli {

namespace {

struct Args {
    std::string kind = "cosine";
    double start = 0.2, end = 1.0, tau = 3.0;
    std::string out = "runs/analyze-schedule";
    std::string config_path;
    int samples = 1001;
    uint64_t seed = 0;
};

void write_schedule_csv(const NoiseSchedule& s, int samples, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "t,gamma,logsnr\n";
    for (int i = 0; i < samples; ++i) {
        const double t = double(i) / (samples - 1);
        f << format_double(t) << ',' << format_double(gamma_of(s, t)) << ','
          << format_double(log_snr(s, t)) << '\n';
    }
    if (!f) throw IoError("write failed: " + path);
}

void run(const Args& a) {
    NoiseSchedule sched;
    const ScheduleKind kind = schedule_kind_from_name(a.kind);
    switch (kind) {
        case ScheduleKind::linear: sched = NoiseSchedule::linear(); break;
        case ScheduleKind::cosine_adjusted:
            sched = NoiseSchedule::cosine_adjusted(a.start, a.end, a.tau);
            break;
        case ScheduleKind::sigmoid: sched = NoiseSchedule::sigmoid(a.start, a.end, a.tau); break;
    }
    if (a.samples < 2) throw ConfigError("samples must be >= 2");

    KvFile cfg = load_config_or_default(a.config_path);
    cfg.set("kind", a.kind);
    cfg.set("start", a.start);
    cfg.set("end", a.end);
    cfg.set("tau", a.tau);
    cfg.set("samples", static_cast<int64_t>(a.samples));
    auto ctx = RunContext::create(a.out, "analyze-schedule", cfg, a.seed, 1);

    write_schedule_csv(sched, a.samples, ctx.path("schedule.csv"));
    const auto lin = NoiseSchedule::linear();
    write_schedule_csv(lin, a.samples, ctx.path("linear_reference.csv"));

    // comparison summary vs. the default linear ramp
    int below = 0;
    double max_gap = -1e300, min_gap = 1e300;
    for (int i = 1; i < a.samples - 1; ++i) {
        const double t = double(i) / (a.samples - 1);
        const double gap = log_snr(sched, t) - log_snr(lin, t);
        if (gap < 0) ++below;
        max_gap = std::max(max_gap, gap);
        min_gap = std::min(min_gap, gap);
    }
    KvFile summary;
    summary.set("kind", a.kind);
    summary.set("interior_points", static_cast<int64_t>(a.samples - 2));
    summary.set("points_below_linear", static_cast<int64_t>(below));
    summary.set("logsnr_gap_min", min_gap);
    summary.set("logsnr_gap_max", max_gap);
    summary.save(ctx.path("summary.kv"));
}

}  // namespace

void setup_analyze_schedule(CLI::App& app) {
    auto args = std::make_shared<Args>();
    auto* cmd = app.add_subcommand("analyze-schedule",
                                   "Emit (t, gamma, logSNR) CSV for a noise schedule");
    cmd->add_option("--kind", args->kind, "linear|cosine|sigmoid")->required();
    cmd->add_option("--start", args->start, "schedule start parameter");
    cmd->add_option("--end", args->end, "schedule end parameter");
    cmd->add_option("--tau", args->tau, "schedule tau parameter");
    cmd->add_option("--samples", args->samples, "grid points");
    cmd->add_option("--out", args->out, "run directory");
    cmd->add_option("--config", args->config_path, "kv config file");
    cmd->add_option("--seed", args->seed, "recorded seed (command is deterministic)");
    cmd->callback([args] { run(*args); });
}

}  // namespace trifield::cli
