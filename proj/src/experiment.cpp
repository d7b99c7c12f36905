#include "deco/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deco/json_fields.hpp"

namespace deco {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace json_fields;

namespace {

const char* const kOutputRootPrefix = "{output_root}/";

struct Context {
    fs::path config_dir;
    fs::path output_root;
    std::uint64_t seed;

    fs::path resolve(const std::string& text) const {
        if (text.rfind(kOutputRootPrefix, 0) == 0)
            return (output_root / text.substr(std::string(kOutputRootPrefix).size())).lexically_normal();
        const fs::path p(text);
        return p.is_absolute() ? p.lexically_normal() : (config_dir / p).lexically_normal();
    }
};

std::string read_string(const json& j, const std::string& key, const std::string& what) {
    if (!j.contains(key)) throw ConfigError(what + "." + key + " is required");
    if (!j.at(key).is_string()) throw ConfigError(what + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

fs::path required_path(const json& j, const std::string& key, const Context& ctx, const std::string& what) {
    return ctx.resolve(read_string(j, key, what));
}

std::optional<fs::path> optional_path(const json& j, const std::string& key, const Context& ctx,
                                      const std::string& what) {
    if (!j.contains(key)) return std::nullopt;
    return ctx.resolve(read_string(j, key, what));
}

TrainConfig read_train(const json& j, const std::string& key, TrainConfig c, const Context& ctx,
                       const std::string& what) {
    if (j.contains(key)) {
        try {
            from_json(j.at(key), c);
        } catch (const ConfigError& e) {
            throw ConfigError(what + "." + key + ": " + e.what());
        }
        if (!j.at(key).contains("seed")) c.seed = ctx.seed;
    } else {
        c.seed = ctx.seed;
    }
    c.validate();
    return c;
}

template <typename T>
T read_object(const json& j, const std::string& key, T value, const std::string& what) {
    if (!j.contains(key)) return value;
    try {
        from_json(j.at(key), value);
    } catch (const ConfigError& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
    return value;
}

MappingKind read_mapping(const json& j, const std::string& key, MappingKind value, const std::string& what) {
    if (!j.contains(key)) return value;
    return parse_mapping(read_string(j, key, what));
}

void require_deco_checkpoint(bool needed, const std::optional<fs::path>& path, const std::string& what) {
    if (needed && !path) throw ConfigError(what + ".deco_checkpoint is required for the deco mapping");
}

DatasetSpec parse_dataset(const json& j, const Context& ctx, const std::string& what) {
    require_object(j, {"synth", "washington", "manifest", "merge_first_token", "split", "val_fraction"}, what);
    DatasetSpec d;
    int sources = 0;
    if (j.contains("synth")) {
        SynthConfig s = read_object(j, "synth", SynthConfig{}, what);
        if (!j.at("synth").contains("seed")) s.seed = ctx.seed;
        s.validate();
        d.synth = s;
        ++sources;
    }
    if ((d.washington = optional_path(j, "washington", ctx, what))) ++sources;
    if ((d.manifest = optional_path(j, "manifest", ctx, what))) ++sources;
    if (sources != 1) throw ConfigError(what + " needs exactly one of synth, washington, manifest");
    read(j, "merge_first_token", d.merge_first_token, what);
    if (j.contains("split")) d.split = parse_split_mode(read_string(j, "split", what));
    read(j, "val_fraction", d.val_fraction, what);
    if (!(d.val_fraction >= 0 && d.val_fraction < 1)) throw ConfigError(what + ".val_fraction must be in [0,1)");
    return d;
}

GenDataSection parse_gen_data(const json& j, const Context& ctx) {
    const std::string what = "gen_data";
    require_object(j, {"datasets"}, what);
    if (!j.contains("datasets") || !j.at("datasets").is_object() || j.at("datasets").empty())
        throw ConfigError("gen_data.datasets must be a nonempty object");
    GenDataSection s;
    for (const auto& [name, spec] : j.at("datasets").items()) {
        if (name.empty() || name.find_first_of("/\\") != std::string::npos || name == "." || name == "..")
            throw ConfigError("gen_data.datasets: invalid dataset name '" + name + "'");
        s.datasets[name] = parse_dataset(spec, ctx, what + ".datasets." + name);
    }
    return s;
}

PretrainSection parse_pretrain(const json& j, const Context& ctx) {
    const std::string what = "pretrain";
    require_object(j, {"manifest", "backbone", "train", "min_val_accuracy"}, what);
    PretrainSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.backbone = read_object(j, "backbone", s.backbone, what);
    s.backbone.validate();
    s.train = read_train(j, "train", s.train, ctx, what);
    read(j, "min_val_accuracy", s.min_val_accuracy, what);
    if (!(s.min_val_accuracy >= 0 && s.min_val_accuracy <= 1))
        throw ConfigError("pretrain.min_val_accuracy must be in [0,1]");
    return s;
}

TrainDecoSection parse_train_deco(const json& j, const Context& ctx) {
    const std::string what = "train_deco";
    require_object(j, {"manifest", "backbone_checkpoint", "deco", "train"}, what);
    TrainDecoSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.backbone_checkpoint = required_path(j, "backbone_checkpoint", ctx, what);
    s.deco = read_object(j, "deco", s.deco, what);
    s.deco.validate();
    s.train = read_train(j, "train", s.train, ctx, what);
    return s;
}

TransferSection parse_transfer(const json& j, const Context& ctx) {
    const std::string what = "transfer";
    require_object(j, {"manifest", "backbone_checkpoint", "deco_checkpoint", "mappings", "train", "surface_normals"},
                   what);
    TransferSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.backbone_checkpoint = required_path(j, "backbone_checkpoint", ctx, what);
    s.deco_checkpoint = optional_path(j, "deco_checkpoint", ctx, what);
    if (j.contains("mappings")) {
        std::vector<std::string> names;
        read(j, "mappings", names, what);
        if (names.empty()) throw ConfigError("transfer.mappings must not be empty");
        s.mappings.clear();
        for (const std::string& n : names) s.mappings.push_back(parse_mapping(n));
    }
    bool uses_deco = false;
    for (MappingKind k : s.mappings) uses_deco = uses_deco || k == MappingKind::deco;
    require_deco_checkpoint(uses_deco, s.deco_checkpoint, what);
    s.train = read_train(j, "train", s.train, ctx, what);
    s.surface_normals = read_object(j, "surface_normals", s.surface_normals, what);
    return s;
}

FinetuneSection parse_finetune(const json& j, const Context& ctx) {
    const std::string what = "finetune";
    require_object(j, {"manifest", "backbone_checkpoint", "deco_checkpoint", "mapping", "train", "surface_normals"},
                   what);
    FinetuneSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.backbone_checkpoint = required_path(j, "backbone_checkpoint", ctx, what);
    s.deco_checkpoint = optional_path(j, "deco_checkpoint", ctx, what);
    s.mapping = read_mapping(j, "mapping", s.mapping, what);
    require_deco_checkpoint(s.mapping == MappingKind::deco, s.deco_checkpoint, what);
    s.train = read_train(j, "train", s.train, ctx, what);
    s.surface_normals = read_object(j, "surface_normals", s.surface_normals, what);
    return s;
}

EvaluateSection parse_evaluate(const json& j, const Context& ctx) {
    const std::string what = "evaluate";
    require_object(j, {"manifest", "backbone_checkpoint", "deco_checkpoint", "mapping", "split", "surface_normals"},
                   what);
    EvaluateSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.backbone_checkpoint = required_path(j, "backbone_checkpoint", ctx, what);
    s.deco_checkpoint = optional_path(j, "deco_checkpoint", ctx, what);
    s.mapping = read_mapping(j, "mapping", s.mapping, what);
    require_deco_checkpoint(s.mapping == MappingKind::deco, s.deco_checkpoint, what);
    if (j.contains("split")) s.split = parse_split(read_string(j, "split", what));
    s.surface_normals = read_object(j, "surface_normals", s.surface_normals, what);
    return s;
}

AblateSection parse_ablate(const json& j, const Context& ctx) {
    const std::string what = "ablate";
    require_object(j, {"reference", "testbed", "backbone_checkpoint", "deco", "blocks", "filters", "phase1", "phase2"},
                   what);
    AblateSection s;
    s.reference = required_path(j, "reference", ctx, what);
    s.testbed = required_path(j, "testbed", ctx, what);
    s.backbone_checkpoint = required_path(j, "backbone_checkpoint", ctx, what);
    s.deco = read_object(j, "deco", s.deco, what);
    read(j, "blocks", s.blocks, what);
    read(j, "filters", s.filters, what);
    if (s.blocks.empty() || s.filters.empty()) throw ConfigError("ablate.blocks and ablate.filters must be nonempty");
    for (int b : s.blocks)
        for (int f : s.filters) {
            DecoConfig c = s.deco;
            c.num_blocks = b;
            c.num_filters = f;
            c.validate();
        }
    TrainConfig p1 = TrainConfig::defaults(Phase::phase1), p2 = TrainConfig::defaults(Phase::phase2);
    s.phase1 = read_train(j, "phase1", p1, ctx, what);
    s.phase2 = read_train(j, "phase2", p2, ctx, what);
    return s;
}

FuseSection parse_fuse(const json& j, const Context& ctx) {
    const std::string what = "fuse";
    require_object(j,
                   {"manifest", "rgb_backbone_checkpoint", "depth_backbone_checkpoint", "deco_checkpoint",
                    "depth_mapping", "fusion", "cross_validate", "surface_normals"},
                   what);
    FuseSection s;
    s.manifest = required_path(j, "manifest", ctx, what);
    s.rgb_backbone_checkpoint = required_path(j, "rgb_backbone_checkpoint", ctx, what);
    s.depth_backbone_checkpoint = required_path(j, "depth_backbone_checkpoint", ctx, what);
    s.deco_checkpoint = optional_path(j, "deco_checkpoint", ctx, what);
    s.depth_mapping = read_mapping(j, "depth_mapping", s.depth_mapping, what);
    if (s.depth_mapping == MappingKind::rgb) throw ConfigError("fuse.depth_mapping must be a depth mapping");
    require_deco_checkpoint(s.depth_mapping == MappingKind::deco, s.deco_checkpoint, what);
    s.fusion = read_object(j, "fusion", s.fusion, what);
    s.fusion.validate();
    read(j, "cross_validate", s.cross_validate, what);
    s.surface_normals = read_object(j, "surface_normals", s.surface_normals, what);
    return s;
}

ColorizeSection parse_colorize(const json& j, const Context& ctx) {
    const std::string what = "colorize";
    require_object(j, {"inputs", "manifest", "limit", "deco_checkpoint", "surface_normals"}, what);
    ColorizeSection s;
    std::vector<std::string> inputs;
    read(j, "inputs", inputs, what);
    for (const std::string& i : inputs) s.inputs.push_back(ctx.resolve(i));
    s.manifest = optional_path(j, "manifest", ctx, what);
    read(j, "limit", s.limit, what);
    if (s.inputs.empty() && !s.manifest) throw ConfigError("colorize needs inputs or a manifest");
    s.deco_checkpoint = required_path(j, "deco_checkpoint", ctx, what);
    s.surface_normals = read_object(j, "surface_normals", s.surface_normals, what);
    return s;
}

ReportSection parse_report(const json& j, const Context& ctx) {
    require_object(j, {"eval_report"}, "report");
    return ReportSection{required_path(j, "eval_report", ctx, "report")};
}

}  // namespace

std::string to_string(Command command) {
    switch (command) {
        case Command::gen_data: return "gen-data";
        case Command::pretrain: return "pretrain";
        case Command::colorize: return "colorize";
        case Command::train_deco: return "train-deco";
        case Command::transfer: return "transfer";
        case Command::finetune: return "finetune";
        case Command::ablate: return "ablate";
        case Command::fuse: return "fuse";
        case Command::evaluate: return "evaluate";
        case Command::report: return "report";
    }
    return "?";
}

const std::vector<Command>& all_commands() {
    static const std::vector<Command> commands = {Command::gen_data, Command::pretrain,  Command::colorize,
                                                  Command::train_deco, Command::transfer, Command::finetune,
                                                  Command::ablate,   Command::fuse,      Command::evaluate,
                                                  Command::report};
    return commands;
}

Command parse_command(const std::string& name) {
    for (Command c : all_commands())
        if (to_string(c) == name) return c;
    throw ConfigError("unknown subcommand '" + name + "'");
}

std::string section_key(Command command) {
    std::string key = to_string(command);
    for (char& c : key)
        if (c == '-') c = '_';
    return key;
}

fs::path resolve_output_root(const fs::path& config_dir) {
    const char* env = std::getenv("DECO_OUTPUT_ROOT");
    if (env && *env) return fs::path(env);
    return config_dir;
}

ExperimentConfig parse_experiment(const json& j, const fs::path& config_dir, const fs::path& output_root,
                                  std::optional<std::uint64_t> seed_override) {
    std::set<std::string> keys = {"seed", "output_dir", "description"};
    for (Command c : all_commands()) keys.insert(section_key(c));
    require_object(j, keys, "experiment");
    ExperimentConfig e;
    e.raw = j;
    read(j, "seed", e.seed, "experiment");
    if (seed_override) e.seed = *seed_override;
    e.output_root = output_root;
    const Context ctx{config_dir, output_root, e.seed};
    if (j.contains("output_dir")) {
        const fs::path p(read_string(j, "output_dir", "experiment"));
        e.output_dir = p.is_absolute() ? p : (output_root / p).lexically_normal();
    }
    if (j.contains("gen_data")) e.gen_data = parse_gen_data(j.at("gen_data"), ctx);
    if (j.contains("pretrain")) e.pretrain = parse_pretrain(j.at("pretrain"), ctx);
    if (j.contains("colorize")) e.colorize = parse_colorize(j.at("colorize"), ctx);
    if (j.contains("train_deco")) e.train_deco = parse_train_deco(j.at("train_deco"), ctx);
    if (j.contains("transfer")) e.transfer = parse_transfer(j.at("transfer"), ctx);
    if (j.contains("finetune")) e.finetune = parse_finetune(j.at("finetune"), ctx);
    if (j.contains("ablate")) e.ablate = parse_ablate(j.at("ablate"), ctx);
    if (j.contains("fuse")) e.fuse = parse_fuse(j.at("fuse"), ctx);
    if (j.contains("evaluate")) e.evaluate = parse_evaluate(j.at("evaluate"), ctx);
    if (j.contains("report")) e.report = parse_report(j.at("report"), ctx);
    return e;
}

ExperimentConfig load_experiment(const fs::path& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    ExperimentConfig e = parse_experiment(j, dir, resolve_output_root(dir), seed_override);
    e.source = path;
    e.sha256 = sha256_hex(text);
    return e;
}

}  // namespace deco
