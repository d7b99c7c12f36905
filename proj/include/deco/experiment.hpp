#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/backbone.hpp"
#include "deco/deco.hpp"
#include "deco/mapping.hpp"
#include "deco/report.hpp"
#include "deco/synth.hpp"
#include "deco/training.hpp"

// One JSON file per experiment. Each subcommand reads its own section; unknown keys are errors.
// Relative input paths resolve against the config file's directory, except those starting with
// "{output_root}/", which resolve against the output root (see resolve_output_root).
namespace deco {

enum class Command { gen_data, pretrain, colorize, train_deco, transfer, finetune, ablate, fuse, evaluate, report };

// "gen-data", "train-deco", ...
std::string to_string(Command command);
Command parse_command(const std::string& name);
const std::vector<Command>& all_commands();
// Config section key: "gen_data", "train_deco", ...
std::string section_key(Command command);

struct DatasetSpec {
    // Exactly one source.
    std::optional<SynthConfig> synth;
    std::optional<std::filesystem::path> washington;  // root of a Washington-style tree
    std::optional<std::filesystem::path> manifest;    // existing manifest.csv
    bool merge_first_token = false;
    std::optional<SplitMode> split;  // none: every entry stays in train
    double val_fraction = 0.1;
};

struct GenDataSection {
    std::map<std::string, DatasetSpec> datasets;  // written to <output>/<name>/manifest.csv
};

struct PretrainSection {
    std::filesystem::path manifest;
    BackboneConfig backbone;
    TrainConfig train = TrainConfig::defaults(Phase::pretrain);
    double min_val_accuracy = 0.9;
};

struct TrainDecoSection {
    std::filesystem::path manifest;
    std::filesystem::path backbone_checkpoint;
    DecoConfig deco;
    TrainConfig train = TrainConfig::defaults(Phase::phase1);
};

struct TransferSection {
    std::filesystem::path manifest;
    std::filesystem::path backbone_checkpoint;
    std::optional<std::filesystem::path> deco_checkpoint;
    std::vector<MappingKind> mappings = depth_mappings();
    TrainConfig train = TrainConfig::defaults(Phase::phase2);
    SurfaceNormalsParams surface_normals;
};

struct FinetuneSection {
    std::filesystem::path manifest;
    std::filesystem::path backbone_checkpoint;
    std::optional<std::filesystem::path> deco_checkpoint;
    MappingKind mapping = MappingKind::deco;
    TrainConfig train = TrainConfig::defaults(Phase::finetune);
    SurfaceNormalsParams surface_normals;
};

struct EvaluateSection {
    std::filesystem::path manifest;
    std::filesystem::path backbone_checkpoint;
    std::optional<std::filesystem::path> deco_checkpoint;
    MappingKind mapping = MappingKind::deco;
    Split split = Split::test;
    SurfaceNormalsParams surface_normals;
};

struct AblateSection {
    std::filesystem::path reference;
    std::filesystem::path testbed;
    std::filesystem::path backbone_checkpoint;
    DecoConfig deco;
    std::vector<int> blocks{4, 8, 16};
    std::vector<int> filters{32, 64, 128};
    TrainConfig phase1 = TrainConfig::defaults(Phase::phase1);
    TrainConfig phase2 = TrainConfig::defaults(Phase::phase2);
};

struct FuseSection {
    std::filesystem::path manifest;  // entries need rgb_path
    std::filesystem::path rgb_backbone_checkpoint;
    std::filesystem::path depth_backbone_checkpoint;
    std::optional<std::filesystem::path> deco_checkpoint;
    MappingKind depth_mapping = MappingKind::deco;
    FusionConfig fusion;
    bool cross_validate = true;  // pick alpha on the val split, else use fusion.alpha
    SurfaceNormalsParams surface_normals;
};

struct ColorizeSection {
    std::vector<std::filesystem::path> inputs;  // depth PNGs
    std::optional<std::filesystem::path> manifest;
    std::size_t limit = 0;  // manifest entries to take, 0 = all
    std::filesystem::path deco_checkpoint;  // tiles are rendered at the network's input size
    SurfaceNormalsParams surface_normals;
};

struct ReportSection {
    std::filesystem::path eval_report;
};

struct ExperimentConfig {
    std::filesystem::path source;  // config file, empty when parsed from memory
    std::string sha256;            // of the config file bytes
    std::uint64_t seed = 0;
    std::filesystem::path output_root;
    std::optional<std::filesystem::path> output_dir;  // resolved against output_root

    std::optional<GenDataSection> gen_data;
    std::optional<PretrainSection> pretrain;
    std::optional<ColorizeSection> colorize;
    std::optional<TrainDecoSection> train_deco;
    std::optional<TransferSection> transfer;
    std::optional<FinetuneSection> finetune;
    std::optional<AblateSection> ablate;
    std::optional<FuseSection> fuse;
    std::optional<EvaluateSection> evaluate;
    std::optional<ReportSection> report;

    nlohmann::json raw;  // the parsed file
};

// DECO_OUTPUT_ROOT when set and nonempty, else config_dir.
std::filesystem::path resolve_output_root(const std::filesystem::path& config_dir);

// Training sections without an explicit "seed" take the experiment seed (seed_override when given).
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& config_dir,
                                  const std::filesystem::path& output_root,
                                  std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace deco
