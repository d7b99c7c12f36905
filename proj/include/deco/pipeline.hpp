#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/backbone.hpp"
#include "deco/deco.hpp"
#include "deco/mapping.hpp"
#include "deco/report.hpp"
#include "deco/training.hpp"

// The experimental protocol: phase 1 learns DE²CO through a frozen backbone, phase 2 trains a new
// final layer on another dataset, finetuning unfreezes the backbone. Every stage checks the freeze
// state it depends on and throws ProtocolError otherwise.
namespace deco {

// A manifest whose entries are all in train gets a stratified validation subset (sample mode).
// Anything else is returned unchanged.
DatasetManifest with_validation_split(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

struct Phase1Result {
    TrainHistory history;
    double train_accuracy = 0;  // eval mode, best-validation weights
    double val_accuracy = 0;
};

// Trains DE²CO and a fresh backbone head for the reference classes. The trunk must be frozen and
// DE²CO trainable. Best-validation weights are restored at the end.
Phase1Result train_deco_phase1(DecoModel& deco, BackboneModel& backbone, const DatasetManifest& reference,
                               const TrainConfig& config);

struct TransferResult {
    EvalReport report;
    TrainHistory history;
};

// Replaces the head with one for the testbed classes and trains only that layer on cached
// penultimate features; DE²CO (when used) and the trunk must be frozen. Needs train, val and
// test entries; the report covers the test split.
TransferResult transfer_phase2(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& testbed,
                               const TrainConfig& config, const nlohmann::json& snapshot = {});

// Unfreezes the trunk and trains the whole backbone on mapped images; DE²CO (when used) must be frozen.
// The head is kept when it already scores the manifest's classes, replaced otherwise. The report
// carries a warning when accuracy falls below the frozen-feature accuracy measured beforehand.
TransferResult finetune(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& manifest,
                        const TrainConfig& config, const nlohmann::json& snapshot = {});

// Eval-mode classification of one split.
EvalReport evaluate(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& manifest,
                    Split split = Split::test, const nlohmann::json& snapshot = {});

struct MappingRun {
    TransferResult result;
    Checkpoint backbone;  // after phase 2
};

// Phase 2 for each mapping, each starting from the same backbone checkpoint.
std::vector<MappingRun> run_mapping_comparison(const std::vector<MappingKind>& kinds, DecoModel* deco,
                                               const Checkpoint& backbone_checkpoint, const DatasetManifest& testbed,
                                               const TrainConfig& config, const SurfaceNormalsParams& normals = {},
                                               const nlohmann::json& snapshot = {});
// Reports only.
std::vector<EvalReport> compare_mappings(const std::vector<MappingKind>& kinds, DecoModel* deco,
                                         const Checkpoint& backbone_checkpoint, const DatasetManifest& testbed,
                                         const TrainConfig& config, const SurfaceNormalsParams& normals = {},
                                         const nlohmann::json& snapshot = {});

// Accuracy table with one row per mapping.
std::string comparison_csv(const std::vector<EvalReport>& reports);

struct AblationSetup {
    DatasetManifest reference;
    DatasetManifest testbed;
    Checkpoint backbone;
    DecoConfig deco;  // num_blocks / num_filters are overridden per cell
    TrainConfig phase1 = TrainConfig::defaults(Phase::phase1);
    TrainConfig phase2 = TrainConfig::defaults(Phase::phase2);
    std::uint64_t seed = 0;
};

struct AblationCell {
    int blocks = 0;
    int filters = 0;
    std::uint64_t seed = 0;
    double accuracy = 0;
    EvalReport report;
};

struct AblationTable {
    std::vector<int> blocks;
    std::vector<int> filters;
    std::vector<AblationCell> cells;  // row-major: filters outer, blocks inner

    const AblationCell& at(std::size_t filter_index, std::size_t block_index) const;
    // "filters/blocks,4 blocks,..." then one row per filter count.
    std::string to_csv() const;
};

// Seed of one cell, a function of the base seed and the cell's shape only.
std::uint64_t ablation_cell_seed(std::uint64_t seed, int blocks, int filters);

// Phase 1 on the reference set, then phase 2 of the DE²CO mapping on the testbed.
AblationCell run_ablation_cell(const AblationSetup& setup, int blocks, int filters);

// Any failing cell aborts with an error naming the cell.
AblationTable ablation_grid(const std::vector<int>& blocks, const std::vector<int>& filters,
                            const AblationSetup& setup);

}  // namespace deco
