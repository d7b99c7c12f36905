#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deco/error.hpp"
#include "deco/experiment.hpp"

// Subcommand runners shared by the CLI and the Python module. Every run writes run_manifest.json
// (config hash, seed, version, input hashes, output list) beside its outputs.
namespace deco {

struct CommandOptions {
    Command command = Command::report;
    std::filesystem::path config;
    std::optional<std::filesystem::path> output_dir;  // overrides the config
    std::optional<std::uint64_t> seed;                // overrides the config
};

struct CommandResult {
    std::filesystem::path output_dir;
    std::vector<std::string> outputs;  // relative to output_dir, sorted
};

CommandResult run_command(const CommandOptions& options);
CommandResult run_command(Command command, const ExperimentConfig& config, const std::filesystem::path& output_dir);

// Default: <output_root>/runs/<command>, or the config's output_dir.
std::filesystem::path default_output_dir(Command command, const ExperimentConfig& config);

// 2 config, 3 data, 4 training/protocol, 5 missing artifact.
int exit_code(ErrorKind kind);
std::string to_string(ErrorKind kind);
// error: code=N kind=K message="..."
std::string error_line(int code, const std::string& kind, const std::string& message);

std::string version();

}  // namespace deco
