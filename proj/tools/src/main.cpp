// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cstdio>
#include <exception>

#include "commands.hpp"
#include "trifield/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"trifield: triplane fitting and cascaded triplane diffusion lab"};
    app.require_subcommand(1);

    trifield::cli::setup_analyze_schedule(app);

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const trifield::ConfigError& e) {
        std::fprintf(stderr, "error: code=2 msg=\"%s\"\n", e.what());
        return 2;
    } catch (const trifield::DivergenceError& e) {
        std::fprintf(stderr, "error: code=3 msg=\"%s\"\n", e.what());
        return 3;
    } catch (const trifield::IoError& e) {
        std::fprintf(stderr, "error: code=4 msg=\"%s\"\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: code=1 msg=\"%s\"\n", e.what());
        return 1;
    }
}
