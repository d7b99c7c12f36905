#include "deco/pipeline.hpp"

#include <filesystem>
#include <functional>
#include <set>

#include "deco/log.hpp"

namespace deco {

namespace fs = std::filesystem;

namespace {

// Shared epoch loop. forward maps a batch of training indices to logits with a recorded graph;
// val_accuracy evaluates the current weights. The best-validation state is restored at the end.
TrainHistory fit(const TrainConfig& config, const std::vector<Parameter*>& params,
                 const std::vector<NamedTensor>& state, const std::vector<int>& labels,
                 const std::function<Tensor(const std::vector<std::size_t>&)>& forward,
                 const std::function<double()>& val_accuracy, const std::string& what) {
    config.validate();
    if (labels.empty()) throw DataError(what + ": training split is empty");
    TrainHistory history;
    OptimizerState opt = config.make_optimizer();
    const LrSchedule schedule = config.schedule();
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    Checkpoint best;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLog log{epoch, lr_at(schedule, epoch), 0, 0, 0};
        opt.set_learning_rate(log.lr);
        std::size_t hits = 0;
        for (const auto& idx : make_batches(labels.size(), config.batch_size, rng)) {
            std::vector<int> batch_labels;
            for (std::size_t i : idx) batch_labels.push_back(labels[i]);
            zero_grads(params);
            const Tensor logits = forward(idx);
            const Tensor loss = softmax_cross_entropy(logits, batch_labels);
            loss.backward();
            optimizer_step(opt, params);
            log.train_loss += loss.item() * double(idx.size());
            const std::vector<int> pred = predict(logits);
            for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch_labels[i];
        }
        log.train_loss /= double(labels.size());
        log.train_accuracy = double(hits) / double(labels.size());
        log.val_accuracy = val_accuracy();
        history.epochs.push_back(log);
        log_info(what + " epoch " + std::to_string(epoch) + " lr " + std::to_string(log.lr) + " loss " +
                 format_real(log.train_loss) + " train " + format_real(log.train_accuracy) + " val " +
                 format_real(log.val_accuracy));
        if (history.best_epoch < 0 || log.val_accuracy > history.best_val_accuracy) {
            history.best_epoch = epoch;
            history.best_val_accuracy = log.val_accuracy;
            best.entries.clear();
            for (const NamedTensor& e : state) best.entries.push_back({e.name, e.tensor.clone()});
        }
    }
    assign_state(state, best);
    return history;
}

Tensor gather_rows(const Tensor& matrix, const std::vector<std::size_t>& rows) {
    const std::size_t d = matrix.dim(1);
    const std::vector<double> v = matrix.to_vector();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (std::size_t r : rows) out.insert(out.end(), v.begin() + long(r * d), v.begin() + long((r + 1) * d));
    return Tensor::from_vector({rows.size(), d}, out, matrix.dtype());
}

Tensor features_for(BackboneModel& backbone, const std::vector<Tensor>& images, std::size_t chunk = 64) {
    NoGradGuard guard;
    std::vector<double> all;
    for (std::size_t i = 0; i < images.size(); i += chunk) {
        const std::vector<Tensor> part(images.begin() + long(i),
                                       images.begin() + long(std::min(images.size(), i + chunk)));
        const std::vector<double> v = backbone.features(stack(part), Mode::eval).to_vector();
        all.insert(all.end(), v.begin(), v.end());
    }
    return Tensor::from_vector({images.size(), std::size_t(backbone.config().hidden)}, all);
}

Tensor phase1_logits(DecoModel& deco, BackboneModel& backbone, const std::vector<Tensor>& inputs,
                     std::size_t chunk = 64) {
    NoGradGuard guard;
    std::vector<double> all;
    for (std::size_t i = 0; i < inputs.size(); i += chunk) {
        const std::vector<Tensor> part(inputs.begin() + long(i),
                                       inputs.begin() + long(std::min(inputs.size(), i + chunk)));
        const std::vector<double> v = backbone.logits(deco.forward(stack(part), Mode::eval), Mode::eval).to_vector();
        all.insert(all.end(), v.begin(), v.end());
    }
    return Tensor::from_vector({inputs.size(), backbone.num_classes()}, all);
}

void require_frozen_deco(const Mapping& mapping, const std::string& stage) {
    if (mapping.kind != MappingKind::deco) return;
    if (!mapping.deco) throw std::invalid_argument(stage + ": deco mapping without a model");
    if (!mapping.deco->frozen()) throw ProtocolError(stage + " requires a frozen DE²CO");
}

void require_splits(const DatasetManifest& manifest, const std::string& stage) {
    if (manifest.count(Split::train) == 0 || manifest.count(Split::val) == 0 || manifest.count(Split::test) == 0)
        throw DataError(stage + " needs train, val and test entries (got " +
                        std::to_string(manifest.count(Split::train)) + "/" +
                        std::to_string(manifest.count(Split::val)) + "/" +
                        std::to_string(manifest.count(Split::test)) + ")");
}

int image_size(const BackboneModel& backbone) { return backbone.config().input_size; }

EvalReport report_from_logits(const Tensor& logits, const LabeledImages& data, const Mapping& mapping,
                              BackboneModel& backbone, const DatasetManifest& manifest, Split split,
                              const nlohmann::json& snapshot) {
    EvalReport r = build_eval_report(predict(logits), data.labels, data.classes, mapping.name());
    r.split = to_string(split);
    r.backbone_checkpoint = backbone.origin;
    r.trunk_checksum = backbone.trunk_checksum();
    r.split_checksum = split_checksum(manifest, split);
    r.config = snapshot.is_null() ? nlohmann::json::object() : snapshot;
    return r;
}

}  // namespace

DatasetManifest with_validation_split(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
    if (manifest.count(Split::train) != manifest.entries.size()) return manifest;
    return make_instance_split(manifest, seed, val_fraction, SplitMode::sample);
}

Phase1Result train_deco_phase1(DecoModel& deco, BackboneModel& backbone, const DatasetManifest& reference,
                               const TrainConfig& config) {
    if (!backbone.trunk_frozen()) throw ProtocolError("phase 1 requires a frozen backbone trunk");
    if (deco.frozen()) throw ProtocolError("phase 1 trains DE²CO, but the model is frozen");
    if (deco.config().input_size != image_size(backbone))
        throw ConfigError("deco input_size " + std::to_string(deco.config().input_size) +
                          " differs from backbone input_size " + std::to_string(image_size(backbone)));
    const DatasetManifest manifest = with_validation_split(reference, 0.1, config.seed);
    if (manifest.count(Split::val) == 0) throw DataError("phase 1 needs a validation split");
    const int size = deco.config().input_size;
    const LabeledImages train = load_deco_inputs(manifest, Split::train, size);
    const LabeledImages val = load_deco_inputs(manifest, Split::val, size);

    backbone.replace_final_layer(manifest.classes(), config.seed + 1);
    const std::string trunk_before = backbone.trunk_checksum();
    std::vector<Parameter*> params = deco.parameters();
    for (Parameter* p : backbone.head_parameters()) params.push_back(p);
    std::vector<NamedTensor> state = deco.state();
    for (Parameter* p : backbone.head_parameters()) state.push_back({p->name, p->tensor});
    std::vector<Parameter*> trunk = backbone.trunk_parameters();

    Phase1Result result;
    result.history = fit(
        config, params, state, train.labels,
        [&](const std::vector<std::size_t>& idx) {
            zero_grads(trunk);
            return backbone.logits(deco.forward(train.batch(idx), Mode::train), Mode::train);
        },
        [&] { return accuracy(predict(phase1_logits(deco, backbone, val.images)), val.labels); }, "phase1");
    for (Parameter* p : trunk) p->tensor.clear_grad();
    if (backbone.trunk_checksum() != trunk_before) throw std::logic_error("phase 1 modified the frozen trunk");
    result.val_accuracy = result.history.best_val_accuracy;
    result.train_accuracy = accuracy(predict(phase1_logits(deco, backbone, train.images)), train.labels);
    return result;
}

TransferResult transfer_phase2(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& testbed,
                               const TrainConfig& config, const nlohmann::json& snapshot) {
    if (!backbone.trunk_frozen()) throw ProtocolError("phase 2 requires a frozen backbone trunk");
    require_frozen_deco(mapping, "phase 2");
    require_splits(testbed, "phase 2");
    const int size = image_size(backbone);
    const std::string deco_before = mapping.kind == MappingKind::deco ? mapping.deco->checksum() : "";
    const LabeledImages train = load_mapped_split(testbed, Split::train, mapping, size);
    const LabeledImages val = load_mapped_split(testbed, Split::val, mapping, size);
    const LabeledImages test = load_mapped_split(testbed, Split::test, mapping, size);

    backbone.replace_final_layer(testbed.classes(), config.seed + 1);
    const Tensor train_features = features_for(backbone, train.images);
    const Tensor val_features = features_for(backbone, val.images);
    const std::vector<Parameter*> params = backbone.head_parameters();
    const std::vector<NamedTensor> state = nn::state_entries(params, {});

    TransferResult result;
    result.history = fit(
        config, params, state, train.labels,
        [&](const std::vector<std::size_t>& idx) { return backbone.classify(gather_rows(train_features, idx)); },
        [&] {
            NoGradGuard guard;
            return accuracy(predict(backbone.classify(val_features)), val.labels);
        },
        "phase2/" + mapping.name());
    if (mapping.kind == MappingKind::deco && mapping.deco->checksum() != deco_before)
        throw std::logic_error("phase 2 modified the frozen DE²CO");
    result.report = report_from_logits(logits_for(backbone, test.images), test, mapping, backbone, testbed,
                                       Split::test, snapshot);
    return result;
}

TransferResult finetune(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& manifest,
                        const TrainConfig& config, const nlohmann::json& snapshot) {
    require_frozen_deco(mapping, "finetuning");
    require_splits(manifest, "finetuning");
    const int size = image_size(backbone);
    const std::string deco_before = mapping.kind == MappingKind::deco ? mapping.deco->checksum() : "";
    const LabeledImages train = load_mapped_split(manifest, Split::train, mapping, size);
    const LabeledImages val = load_mapped_split(manifest, Split::val, mapping, size);
    const LabeledImages test = load_mapped_split(manifest, Split::test, mapping, size);

    std::optional<double> frozen_accuracy;
    if (backbone.classes() == manifest.classes())
        frozen_accuracy = accuracy(predict(logits_for(backbone, test.images)), test.labels);
    else
        backbone.replace_final_layer(manifest.classes(), config.seed + 1);
    backbone.unfreeze_trunk();
    if (backbone.trunk_frozen()) throw ProtocolError("finetuning requires an unfrozen trunk");

    TransferResult result;
    result.history = fit(
        config, backbone.parameters(), backbone.state(), train.labels,
        [&](const std::vector<std::size_t>& idx) { return backbone.logits(train.batch(idx), Mode::train); },
        [&] { return accuracy(predict(logits_for(backbone, val.images)), val.labels); },
        "finetune/" + mapping.name());
    if (mapping.kind == MappingKind::deco && mapping.deco->checksum() != deco_before)
        throw std::logic_error("finetuning modified the frozen DE²CO");
    result.report = report_from_logits(logits_for(backbone, test.images), test, mapping, backbone, manifest,
                                       Split::test, snapshot);
    if (frozen_accuracy && result.report.accuracy < *frozen_accuracy) {
        const std::string w = "finetuned accuracy " + format_real(result.report.accuracy) +
                              " is below the frozen feature-extractor accuracy " + format_real(*frozen_accuracy);
        result.report.warnings.push_back(w);
        log_warning(w);
    }
    return result;
}

EvalReport evaluate(const Mapping& mapping, BackboneModel& backbone, const DatasetManifest& manifest, Split split,
                    const nlohmann::json& snapshot) {
    if (backbone.classes() != manifest.classes())
        throw DataError("backbone head scores a different class list than the manifest");
    const LabeledImages data = load_mapped_split(manifest, split, mapping, image_size(backbone));
    if (data.size() == 0) throw DataError("evaluation split '" + to_string(split) + "' is empty");
    return report_from_logits(logits_for(backbone, data.images), data, mapping, backbone, manifest, split, snapshot);
}

std::vector<MappingRun> run_mapping_comparison(const std::vector<MappingKind>& kinds, DecoModel* deco,
                                               const Checkpoint& backbone_checkpoint, const DatasetManifest& testbed,
                                               const TrainConfig& config, const SurfaceNormalsParams& normals,
                                               const nlohmann::json& snapshot) {
    std::vector<MappingRun> runs;
    for (MappingKind kind : kinds) {
        BackboneModel backbone = BackboneModel::from_checkpoint(backbone_checkpoint);
        backbone.freeze_trunk();
        Mapping mapping{kind, kind == MappingKind::deco ? deco : nullptr, normals};
        TransferResult result = transfer_phase2(mapping, backbone, testbed, config, snapshot);
        runs.push_back({std::move(result), backbone.to_checkpoint()});
    }
    return runs;
}

std::vector<EvalReport> compare_mappings(const std::vector<MappingKind>& kinds, DecoModel* deco,
                                         const Checkpoint& backbone_checkpoint, const DatasetManifest& testbed,
                                         const TrainConfig& config, const SurfaceNormalsParams& normals,
                                         const nlohmann::json& snapshot) {
    std::vector<EvalReport> reports;
    for (MappingRun& run : run_mapping_comparison(kinds, deco, backbone_checkpoint, testbed, config, normals, snapshot))
        reports.push_back(std::move(run.result.report));
    return reports;
}

std::string comparison_csv(const std::vector<EvalReport>& reports) {
    std::string out = "mapping,accuracy,samples,backbone_checkpoint\n";
    for (const EvalReport& r : reports)
        out += r.mapping + "," + format_real(r.accuracy) + "," + std::to_string(r.samples) + "," +
               r.backbone_checkpoint + "\n";
    return out;
}

const AblationCell& AblationTable::at(std::size_t filter_index, std::size_t block_index) const {
    return cells.at(filter_index * blocks.size() + block_index);
}

std::string AblationTable::to_csv() const {
    std::string out = "filters/blocks";
    for (int b : blocks) out += "," + std::to_string(b) + " blocks";
    out += "\n";
    for (std::size_t f = 0; f < filters.size(); ++f) {
        out += std::to_string(filters[f]) + " filters";
        for (std::size_t b = 0; b < blocks.size(); ++b) out += "," + format_real(at(f, b).accuracy);
        out += "\n";
    }
    return out;
}

std::uint64_t ablation_cell_seed(std::uint64_t seed, int blocks, int filters) {
    // splitmix64 finaliser over the combined key
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (std::uint64_t(blocks) * 1000003ULL + std::uint64_t(filters));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

AblationCell run_ablation_cell(const AblationSetup& setup, int blocks, int filters) {
    AblationCell cell;
    cell.blocks = blocks;
    cell.filters = filters;
    cell.seed = ablation_cell_seed(setup.seed, blocks, filters);
    DecoConfig dc = setup.deco;
    dc.num_blocks = blocks;
    dc.num_filters = filters;
    DecoModel deco(dc, cell.seed);
    BackboneModel backbone = BackboneModel::from_checkpoint(setup.backbone);
    backbone.freeze_trunk();
    TrainConfig p1 = setup.phase1, p2 = setup.phase2;
    p1.seed = p2.seed = cell.seed;
    train_deco_phase1(deco, backbone, setup.reference, p1);
    deco.set_frozen(true);
    const nlohmann::json snapshot = {{"deco", dc}, {"phase1", p1}, {"phase2", p2}, {"cell_seed", cell.seed}};
    cell.report = transfer_phase2(Mapping{MappingKind::deco, &deco, {}}, backbone, setup.testbed, p2, snapshot).report;
    cell.accuracy = cell.report.accuracy;
    return cell;
}

AblationTable ablation_grid(const std::vector<int>& blocks, const std::vector<int>& filters,
                            const AblationSetup& setup) {
    if (blocks.empty() || filters.empty()) throw ConfigError("ablation grid needs at least one block and filter count");
    std::set<std::string> seen;
    for (const ManifestEntry& e : setup.reference.entries)
        seen.insert(fs::weakly_canonical(setup.reference.resolve(e.depth_path)).string());
    for (const ManifestEntry& e : setup.testbed.entries)
        if (seen.count(fs::weakly_canonical(setup.testbed.resolve(e.depth_path)).string()))
            throw ProtocolError("ablation testbed reuses reference image " + e.depth_path.generic_string());
    AblationTable table{blocks, filters, {}};
    for (int f : filters)
        for (int b : blocks) {
            try {
                table.cells.push_back(run_ablation_cell(setup, b, f));
            } catch (const Error& e) {
                throw_error(e.kind(), "ablation cell (blocks=" + std::to_string(b) + ", filters=" +
                                          std::to_string(f) + "): " + e.what());
            } catch (const std::exception& e) {
                throw TrainingError("ablation cell (blocks=" + std::to_string(b) + ", filters=" +
                                    std::to_string(f) + "): " + e.what());
            }
        }
    return table;
}

}  // namespace deco
