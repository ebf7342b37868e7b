// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <CLI11.hpp>

// Each subcommand registers its flags on a CLI::App and returns a runner.
// Runners throw ConfigError/DivergenceError/IoError; main maps those to the
// documented exit codes 2/3/4.
namespace trifield::cli {

void setup_gen_data(CLI::App& app);
void setup_fit(CLI::App& app);
void setup_finetune(CLI::App& app);
void setup_train_base(CLI::App& app);
void setup_train_upsample(CLI::App& app);
void setup_sample(CLI::App& app);
void setup_analyze_schedule(CLI::App& app);
void setup_freq_analysis(CLI::App& app);
void setup_destruction_exp(CLI::App& app);
void setup_eval(CLI::App& app);

}  // namespace trifield::cli
