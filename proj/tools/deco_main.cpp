#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "deco/commands.hpp"
#include "deco/log.hpp"

namespace {

constexpr int usage_exit = 64;
constexpr int internal_exit = 1;

int fail(int code, const std::string& kind, const std::string& message) {
    std::cerr << deco::error_line(code, kind, message) << "\n";
    return code;
}

std::string describe(deco::Command command) {
    switch (command) {
        case deco::Command::gen_data: return "build dataset manifests (synthetic, Washington-style tree, or existing)";
        case deco::Command::pretrain: return "pretrain the RGB backbone";
        case deco::Command::colorize: return "render every depth mapping per input, plus a side-by-side grid";
        case deco::Command::train_deco: return "phase 1: learn the colorization network against a frozen backbone";
        case deco::Command::transfer: return "phase 2: retrain a new final layer per mapping on the testbed";
        case deco::Command::finetune: return "unfreeze the backbone and train it behind a frozen mapping";
        case deco::Command::ablate: return "blocks x filters grid of phase 1 + phase 2 runs";
        case deco::Command::fuse: return "late fusion of RGB and depth logits";
        case deco::Command::evaluate: return "score a backbone on one split";
        case deco::Command::report: return "per-class recall chart and tables from an eval report";
    }
    return {};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth colorization experiments: data generation, training, transfer and reporting."};
    app.set_version_flag("--version", deco::version());
    app.require_subcommand(1);

    deco::CommandOptions options;
    std::string config;
    std::string output_dir;
    std::uint64_t seed = 0;
    bool verbose = false;
    bool quiet = false;

    for (deco::Command command : deco::all_commands()) {
        CLI::App* sub = app.add_subcommand(deco::to_string(command), describe(command));
        sub->add_option("-c,--config", config, "experiment config (JSON)")->required();
        sub->add_option("-o,--output-dir", output_dir, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "seed override");
        sub->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");
        sub->add_flag("-q,--quiet", quiet, "suppress warnings");
        sub->final_callback([&options, command] { options.command = command; });
    }

    if (argc > 1 && argv[1][0] != '-') {
        try {
            deco::parse_command(argv[1]);
        } catch (const deco::ConfigError&) {
            return fail(usage_exit, "usage", "unknown subcommand '" + std::string(argv[1]) + "'");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(usage_exit, "usage", e.what());
    }

    options.config = config;
    if (!output_dir.empty()) options.output_dir = output_dir;
    for (CLI::App* sub : app.get_subcommands())
        if (sub->count("--seed")) options.seed = seed;
    deco::set_log_level(quiet ? deco::LogLevel::quiet : verbose ? deco::LogLevel::verbose : deco::LogLevel::normal);

    try {
        const deco::CommandResult result = deco::run_command(options);
        if (!quiet) std::cout << result.output_dir.string() << "\n";
        return 0;
    } catch (const deco::Error& e) {
        return fail(deco::exit_code(e.kind()), deco::to_string(e.kind()), e.what());
    } catch (const std::exception& e) {
        return fail(internal_exit, "internal", e.what());
    }
}
