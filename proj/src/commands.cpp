#include "deco/commands.hpp"

#include <cstdio>
#include <fstream>

#include "deco/log.hpp"
#include "deco/pipeline.hpp"

namespace deco {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Run {
public:
    Run(Command command, const ExperimentConfig& config, fs::path out)
        : command_(command), config_(config), out_(std::move(out)) {
        fs::create_directories(out_);
    }

    const fs::path& dir() const { return out_; }

    void input(const fs::path& p) {
        if (!fs::exists(p)) throw MissingArtifactError("input not found: " + p.string());
        inputs_.push_back({{"path", display(p)}, {"sha256", sha256_file(p)}});
    }

    void text(const std::string& rel, const std::string& content) { write_text_file(out_ / rel, content); }

    void checkpoint(const std::string& rel, const Checkpoint& c) {
        fs::create_directories((out_ / rel).parent_path());
        save_checkpoint(out_ / rel, c);
    }

    void report(const std::string& rel_dir, const EvalReport& r) {
        write_eval_report(r, rel_dir.empty() ? out_ : out_ / rel_dir);
    }

    json snapshot() const {
        const std::string key = section_key(command_);
        return {{"command", to_string(command_)},
                {"seed", config_.seed},
                {key, config_.raw.contains(key) ? config_.raw.at(key) : json::object()}};
    }

    CommandResult finish() {
        CommandResult result{out_, {}};
        json outputs = json::array();
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(out_))
            if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            const std::string rel = f.lexically_relative(out_).generic_string();
            result.outputs.push_back(rel);
            outputs.push_back({{"path", rel}, {"sha256", sha256_file(f)}});
        }
        const json manifest = {{"command", to_string(command_)},
                               {"version", version()},
                               {"seed", config_.seed},
                               {"config", config_.source.filename().generic_string()},
                               {"config_sha256", config_.sha256},
                               {"inputs", inputs_},
                               {"outputs", outputs}};
        write_text_file(out_ / "run_manifest.json", manifest.dump(2) + "\n");
        return result;
    }

private:
    // Paths under the output root or the config directory are recorded relative to them so that
    // manifests do not depend on where the run happened.
    std::string display(const fs::path& p) const {
        const fs::path abs = fs::absolute(p).lexically_normal();
        auto under = [&abs](const fs::path& base) -> std::optional<std::string> {
            const fs::path rel = abs.lexically_relative(fs::absolute(base).lexically_normal());
            if (rel.empty() || *rel.begin() == "..") return std::nullopt;
            return rel.generic_string();
        };
        if (!config_.output_root.empty())
            if (auto rel = under(config_.output_root)) return "{output_root}/" + *rel;
        if (auto rel = under(config_.source.has_parent_path() ? config_.source.parent_path() : fs::path(".")))
            return *rel;
        return p.generic_string();
    }

    Command command_;
    const ExperimentConfig& config_;
    fs::path out_;
    json inputs_ = json::array();
};

template <typename T>
const T& section(const std::optional<T>& s, Command command) {
    if (!s) throw ConfigError("config has no '" + section_key(command) + "' section");
    return *s;
}

DatasetManifest input_manifest(Run& run, const fs::path& p) {
    run.input(p);
    return load_manifest(p);
}

Checkpoint input_checkpoint(Run& run, const fs::path& p) {
    run.input(p);
    return load_checkpoint(p);
}

std::optional<DecoModel> input_deco(Run& run, const std::optional<fs::path>& p) {
    if (!p) return std::nullopt;
    DecoModel m = DecoModel::from_checkpoint(input_checkpoint(run, *p));
    m.set_frozen(true);
    return m;
}

std::string learning_curve_name() { return "learning_curve.csv"; }

void gen_data(Run& run, const ExperimentConfig& e) {
    const GenDataSection& s = section(e.gen_data, Command::gen_data);
    json summary = json::object();
    for (const auto& [name, spec] : s.datasets) {
        const fs::path dir = run.dir() / name;
        DatasetManifest m;
        if (spec.synth) {
            m = gen_synth_depth_dataset(*spec.synth, dir);
        } else if (spec.washington) {
            m = build_washington_manifest(*spec.washington);
        } else {
            m = input_manifest(run, *spec.manifest);
        }
        if (spec.merge_first_token) m = merge_classes_by_first_token(m);
        if (spec.split) m = make_instance_split(m, e.seed, spec.val_fraction, *spec.split);
        save_manifest(m, dir / "manifest.csv");
        summary[name] = {{"entries", m.entries.size()},
                         {"classes", m.classes()},
                         {"train", m.count(Split::train)},
                         {"val", m.count(Split::val)},
                         {"test", m.count(Split::test)}};
        log_info("gen-data: " + name + " has " + std::to_string(m.entries.size()) + " entries");
    }
    run.text("datasets.json", summary.dump(2) + "\n");
}

void pretrain(Run& run, const ExperimentConfig& e) {
    const PretrainSection& s = section(e.pretrain, Command::pretrain);
    const DatasetManifest m = input_manifest(run, s.manifest);
    PretrainResult r = pretrain_backbone(m, s.backbone, s.train, s.min_val_accuracy);
    run.checkpoint("backbone.ckpt", r.model.to_checkpoint());
    run.text(learning_curve_name(), r.history.to_csv());
    const json summary = {{"val_accuracy", r.val_accuracy},
                          {"best_epoch", r.history.best_epoch},
                          {"classes", r.model.classes()},
                          {"channel_mean", r.model.channel_mean},
                          {"trunk_checksum", r.model.trunk_checksum()},
                          {"train", s.train}};
    run.text("pretrain.json", summary.dump(2) + "\n");
}

void train_deco(Run& run, const ExperimentConfig& e) {
    const TrainDecoSection& s = section(e.train_deco, Command::train_deco);
    const DatasetManifest m = input_manifest(run, s.manifest);
    BackboneModel backbone = BackboneModel::from_checkpoint(input_checkpoint(run, s.backbone_checkpoint));
    backbone.freeze_trunk();
    DecoModel deco(s.deco, e.seed);
    const Phase1Result r = train_deco_phase1(deco, backbone, m, s.train);
    run.checkpoint("deco.ckpt", deco.to_checkpoint());
    run.checkpoint("backbone_phase1.ckpt", backbone.to_checkpoint());
    run.text(learning_curve_name(), r.history.to_csv());
    const json summary = {{"train_accuracy", r.train_accuracy},
                          {"val_accuracy", r.val_accuracy},
                          {"best_epoch", r.history.best_epoch},
                          {"trunk_checksum", backbone.trunk_checksum()},
                          {"deco_checksum", deco.checksum()},
                          {"deco", s.deco},
                          {"train", s.train}};
    run.text("phase1.json", summary.dump(2) + "\n");
}

void transfer(Run& run, const ExperimentConfig& e) {
    const TransferSection& s = section(e.transfer, Command::transfer);
    const DatasetManifest m = input_manifest(run, s.manifest);
    const Checkpoint ckpt = input_checkpoint(run, s.backbone_checkpoint);
    std::optional<DecoModel> deco = input_deco(run, s.deco_checkpoint);
    std::vector<MappingRun> runs = run_mapping_comparison(s.mappings, deco ? &*deco : nullptr, ckpt, m, s.train,
                                                          s.surface_normals, run.snapshot());
    std::vector<EvalReport> reports;
    for (const MappingRun& r : runs) {
        const std::string dir = r.result.report.mapping;
        run.report(dir, r.result.report);
        run.text(dir + "/" + learning_curve_name(), r.result.history.to_csv());
        run.checkpoint(dir + "/backbone.ckpt", r.backbone);
        reports.push_back(r.result.report);
    }
    run.text("comparison.csv", comparison_csv(reports));
}

Mapping make_mapping(MappingKind kind, std::optional<DecoModel>& deco, const SurfaceNormalsParams& normals) {
    if (kind == MappingKind::deco && !deco) throw ConfigError("the deco mapping needs deco_checkpoint");
    return Mapping{kind, kind == MappingKind::deco ? &*deco : nullptr, normals};
}

void finetune_cmd(Run& run, const ExperimentConfig& e) {
    const FinetuneSection& s = section(e.finetune, Command::finetune);
    const DatasetManifest m = input_manifest(run, s.manifest);
    BackboneModel backbone = BackboneModel::from_checkpoint(input_checkpoint(run, s.backbone_checkpoint));
    std::optional<DecoModel> deco = input_deco(run, s.deco_checkpoint);
    const TransferResult r = finetune(make_mapping(s.mapping, deco, s.surface_normals), backbone, m, s.train,
                                      run.snapshot());
    run.report("", r.report);
    run.text(learning_curve_name(), r.history.to_csv());
    run.checkpoint("backbone_finetuned.ckpt", backbone.to_checkpoint());
}

void evaluate_cmd(Run& run, const ExperimentConfig& e) {
    const EvaluateSection& s = section(e.evaluate, Command::evaluate);
    const DatasetManifest m = input_manifest(run, s.manifest);
    BackboneModel backbone = BackboneModel::from_checkpoint(input_checkpoint(run, s.backbone_checkpoint));
    std::optional<DecoModel> deco = input_deco(run, s.deco_checkpoint);
    run.report("", evaluate(make_mapping(s.mapping, deco, s.surface_normals), backbone, m, s.split, run.snapshot()));
}

void ablate(Run& run, const ExperimentConfig& e) {
    const AblateSection& s = section(e.ablate, Command::ablate);
    AblationSetup setup;
    setup.reference = input_manifest(run, s.reference);
    setup.testbed = input_manifest(run, s.testbed);
    setup.backbone = input_checkpoint(run, s.backbone_checkpoint);
    setup.deco = s.deco;
    setup.phase1 = s.phase1;
    setup.phase2 = s.phase2;
    setup.seed = e.seed;
    const AblationTable table = ablation_grid(s.blocks, s.filters, setup);
    json cells = json::array();
    for (const AblationCell& c : table.cells) {
        run.report("cells/blocks" + std::to_string(c.blocks) + "_filters" + std::to_string(c.filters), c.report);
        cells.push_back({{"blocks", c.blocks}, {"filters", c.filters}, {"seed", c.seed}, {"accuracy", c.accuracy}});
    }
    run.text("ablation.csv", table.to_csv());
    run.text("ablation.json", json{{"cells", cells}}.dump(2) + "\n");
}

struct SplitLogits {
    std::vector<LogitVector> rows;
    std::vector<int> labels;
};

SplitLogits split_logits(BackboneModel& backbone, const DatasetManifest& m, Split split, const Mapping& mapping) {
    const LabeledImages data = load_mapped_split(m, split, mapping, backbone.config().input_size);
    SplitLogits out;
    out.labels = data.labels;
    if (data.size() == 0) return out;
    for (auto& r : logit_rows(logits_for(backbone, data.images))) out.rows.push_back({r, backbone.classes()});
    return out;
}

std::vector<std::vector<double>> scores(const SplitLogits& s) {
    std::vector<std::vector<double>> out;
    for (const LogitVector& v : s.rows) out.push_back(v.scores);
    return out;
}

void fuse(Run& run, const ExperimentConfig& e) {
    const FuseSection& s = section(e.fuse, Command::fuse);
    const DatasetManifest m = input_manifest(run, s.manifest);
    BackboneModel rgb = BackboneModel::from_checkpoint(input_checkpoint(run, s.rgb_backbone_checkpoint));
    BackboneModel depth = BackboneModel::from_checkpoint(input_checkpoint(run, s.depth_backbone_checkpoint));
    std::optional<DecoModel> deco = input_deco(run, s.deco_checkpoint);
    if (rgb.classes() != m.classes() || depth.classes() != m.classes())
        throw DataError("fuse: both backbones must score the manifest's classes");
    const Mapping rgb_map{MappingKind::rgb, nullptr, s.surface_normals};
    const Mapping depth_map = make_mapping(s.depth_mapping, deco, s.surface_normals);

    double alpha = s.fusion.alpha;
    if (s.cross_validate) {
        const SplitLogits rv = split_logits(rgb, m, Split::val, rgb_map);
        const SplitLogits dv = split_logits(depth, m, Split::val, depth_map);
        if (rv.labels.empty()) throw DataError("fuse: cross-validating alpha needs a val split");
        alpha = cross_validate_alpha(scores(rv), scores(dv), rv.labels, s.fusion.alpha_grid);
    }
    const SplitLogits rt = split_logits(rgb, m, Split::test, rgb_map);
    const SplitLogits dt = split_logits(depth, m, Split::test, depth_map);
    if (rt.labels.empty()) throw DataError("fuse: the test split is empty");
    std::vector<int> rgb_pred, depth_pred, fused_pred;
    for (std::size_t i = 0; i < rt.rows.size(); ++i) {
        rgb_pred.push_back(int(argmax_first(rt.rows[i].scores)));
        depth_pred.push_back(int(argmax_first(dt.rows[i].scores)));
        fused_pred.push_back(int(fuse_predictions(rt.rows[i], dt.rows[i], alpha)));
    }
    auto finish = [&](const std::vector<int>& pred, const std::string& name, const std::string& origin) {
        EvalReport r = build_eval_report(pred, rt.labels, m.classes(), name);
        r.split = "test";
        r.backbone_checkpoint = origin;
        r.split_checksum = split_checksum(m, Split::test);
        r.config = run.snapshot();
        r.config["alpha"] = alpha;
        return r;
    };
    const EvalReport rr = finish(rgb_pred, "rgb", rgb.origin);
    const EvalReport dr = finish(depth_pred, to_string(s.depth_mapping), depth.origin);
    const EvalReport fr = finish(fused_pred, "fusion", rgb.origin + "+" + depth.origin);
    run.report("rgb", rr);
    run.report("depth", dr);
    run.report("fusion", fr);
    const json summary = {{"alpha", alpha},
                          {"cross_validated", s.cross_validate},
                          {"rgb_accuracy", rr.accuracy},
                          {"depth_accuracy", dr.accuracy},
                          {"fused_accuracy", fr.accuracy}};
    run.text("fusion.json", summary.dump(2) + "\n");
}

void colorize(Run& run, const ExperimentConfig& e) {
    const ColorizeSection& s = section(e.colorize, Command::colorize);
    DecoModel deco = DecoModel::from_checkpoint(input_checkpoint(run, s.deco_checkpoint));
    const int size = deco.config().input_size;
    std::vector<fs::path> inputs = s.inputs;
    if (s.manifest) {
        const DatasetManifest m = input_manifest(run, *s.manifest);
        std::size_t taken = 0;
        for (const ManifestEntry& entry : m.entries) {
            if (s.limit && taken == s.limit) break;
            inputs.push_back(m.resolve(entry.depth_path));
            ++taken;
        }
    }
    std::string index = "index,input,grid\n";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        run.input(inputs[i]);
        const DepthMap depth = load_depth(inputs[i]);
        char num[32];
        std::snprintf(num, sizeof num, "%03zu_", i);
        const std::string prefix = num + inputs[i].stem().string();
        std::vector<ColorImage> tiles;
        for (MappingKind kind : depth_mappings()) {
            tiles.push_back(kind == MappingKind::deco ? colorize_image(deco, depth_to_gray(depth, size))
                                                      : handcrafted_colorization(kind, depth, size, s.surface_normals));
            save_color(run.dir() / (prefix + "_" + to_string(kind) + ".png"), tiles.back());
        }
        save_color(run.dir() / (prefix + "_grid.png"), hconcat(tiles));
        index += std::to_string(i) + "," + inputs[i].filename().generic_string() + "," + prefix + "_grid.png\n";
    }
    run.text("colorize.csv", index);
}

void report_cmd(Run& run, const ExperimentConfig& e) {
    const ReportSection& s = section(e.report, Command::report);
    run.input(s.eval_report);
    const EvalReport r = read_eval_report(s.eval_report);
    run.text("recall_chart.svg", recall_chart_svg(r));
    run.text("per_class_recall.csv", r.recall_csv());
    run.text("confusion.csv", r.confusion_csv());
    run.text("summary.txt", r.summary());
}

}  // namespace

std::string version() { return DECO_VERSION; }

fs::path default_output_dir(Command command, const ExperimentConfig& config) {
    if (config.output_dir) return *config.output_dir;
    return config.output_root / "runs" / to_string(command);
}

CommandResult run_command(Command command, const ExperimentConfig& config, const fs::path& output_dir) {
    Run run(command, config, output_dir);
    if (!config.source.empty()) run.input(config.source);
    switch (command) {
        case Command::gen_data: gen_data(run, config); break;
        case Command::pretrain: pretrain(run, config); break;
        case Command::colorize: colorize(run, config); break;
        case Command::train_deco: train_deco(run, config); break;
        case Command::transfer: transfer(run, config); break;
        case Command::finetune: finetune_cmd(run, config); break;
        case Command::ablate: ablate(run, config); break;
        case Command::fuse: fuse(run, config); break;
        case Command::evaluate: evaluate_cmd(run, config); break;
        case Command::report: report_cmd(run, config); break;
    }
    return run.finish();
}

CommandResult run_command(const CommandOptions& options) {
    const ExperimentConfig config = load_experiment(options.config, options.seed);
    const std::string key = section_key(options.command);
    if (!config.raw.contains(key)) throw ConfigError("config has no '" + key + "' section");
    return run_command(options.command, config, options.output_dir ? *options.output_dir
                                                                   : default_output_dir(options.command, config));
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::training:
        case ErrorKind::protocol: return 4;
        case ErrorKind::missing_artifact: return 5;
    }
    return 1;
}

std::string to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::training: return "training";
        case ErrorKind::protocol: return "protocol";
        case ErrorKind::missing_artifact: return "missing_artifact";
    }
    return "internal";
}

std::string error_line(int code, const std::string& kind, const std::string& message) {
    std::string escaped;
    for (char c : message) {
        if (c == '"' || c == '\\') escaped += '\\';
        escaped += (c == '\n' || c == '\r') ? ' ' : c;
    }
    return "error: code=" + std::to_string(code) + " kind=" + kind + " message=\"" + escaped + "\"";
}

}  // namespace deco
