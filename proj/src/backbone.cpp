#include "deco/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "deco/image.hpp"
#include "deco/json_fields.hpp"

namespace deco {

int BackboneConfig::trunk_extent() const { return input_size >> widths.size(); }

void BackboneConfig::validate() const {
    if (widths.empty()) throw ConfigError("backbone.widths must not be empty");
    for (int w : widths)
        if (w < 1) throw ConfigError("backbone.widths must be positive");
    const int div = 1 << widths.size();
    if (input_size < div || input_size % div != 0)
        throw ConfigError("backbone.input_size must be a positive multiple of " + std::to_string(div));
    if (hidden < 1) throw ConfigError("backbone.hidden must be >= 1");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("backbone.leaky_slope must be in [0,1)");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = nlohmann::json{
        {"input_size", c.input_size}, {"widths", c.widths}, {"hidden", c.hidden}, {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    using namespace json_fields;
    require_object(j, {"input_size", "widths", "hidden", "leaky_slope"}, "backbone");
    read(j, "input_size", c.input_size, "backbone");
    read(j, "widths", c.widths, "backbone");
    read(j, "hidden", c.hidden, "backbone");
    read(j, "leaky_slope", c.leaky_slope, "backbone");
}

BackboneModel::BackboneModel(const BackboneConfig& config, std::vector<std::string> classes, std::uint64_t seed,
                             DType dtype)
    : config_(config), classes_(std::move(classes)), dtype_(dtype) {
    config.validate();
    if (classes_.empty()) throw DataError("backbone needs at least one class");
    std::mt19937_64 rng(seed);
    std::size_t in = 3;
    for (std::size_t i = 0; i < config.widths.size(); ++i) {
        const std::string p = "backbone.stage" + std::to_string(i);
        const auto out = std::size_t(config.widths[i]);
        stages.push_back({nn::Conv2d(p + ".conv", in, out, 3, 1, 1, false, rng, dtype),
                          nn::BatchNorm2d(p + ".bn", out, dtype)});
        in = out;
    }
    const auto e = std::size_t(config.trunk_extent());
    fc = nn::Linear("backbone.fc", in * e * e, std::size_t(config.hidden), rng, dtype);
    head = nn::Linear("backbone.head", std::size_t(config.hidden), classes_.size(), rng, dtype);
}

Tensor BackboneModel::preprocess(const Tensor& images) const {
    const std::array<double, 3> shift{-channel_mean[0], -channel_mean[1], -channel_mean[2]};
    return channel_affine(images, 1.0 / 255.0, shift);
}

Tensor BackboneModel::features(const Tensor& images, Mode mode) {
    const auto s = std::size_t(config_.input_size);
    Tensor x = images;
    if (x.ndim() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != s || x.dim(3) != s)
        throw ShapeError("backbone: expected [B,3," + std::to_string(s) + "," + std::to_string(s) + "] input, got " +
                         shape_str(images.shape()));
    const Mode trunk_mode = trunk_frozen_ ? Mode::eval : mode;
    x = preprocess(x);
    for (BackboneStage& st : stages)
        x = maxpool2d(leaky_relu(st.bn.forward(st.conv.forward(x), trunk_mode), config_.leaky_slope), 2, 2, 0);
    x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
    return leaky_relu(fc.forward(x), config_.leaky_slope);
}

Tensor BackboneModel::classify(const Tensor& features) const { return head.forward(features); }

Tensor BackboneModel::logits(const Tensor& images, Mode mode) { return classify(features(images, mode)); }

std::vector<Parameter*> BackboneModel::trunk_parameters() {
    std::vector<Parameter*> out;
    for (BackboneStage& st : stages) {
        st.conv.collect(out);
        st.bn.collect(out);
    }
    fc.collect(out);
    return out;
}

std::vector<Parameter*> BackboneModel::head_parameters() {
    std::vector<Parameter*> out;
    head.collect(out);
    return out;
}

std::vector<Parameter*> BackboneModel::parameters() {
    std::vector<Parameter*> out = trunk_parameters();
    head.collect(out);
    return out;
}

std::vector<NamedTensor> BackboneModel::trunk_state() {
    std::vector<NamedTensor> buffers;
    for (const BackboneStage& st : stages) st.bn.collect_buffers(buffers);
    return nn::state_entries(trunk_parameters(), buffers);
}

std::vector<NamedTensor> BackboneModel::state() {
    std::vector<NamedTensor> entries = trunk_state();
    for (Parameter* p : head_parameters()) entries.push_back({p->name, p->tensor});
    return entries;
}

std::string BackboneModel::trunk_checksum() { return state_checksum(trunk_state()); }

std::string BackboneModel::head_checksum() { return state_checksum(nn::state_entries(head_parameters(), {})); }

void BackboneModel::freeze_trunk() {
    for (Parameter* p : trunk_parameters()) p->frozen = true;
    trunk_frozen_ = true;
}

void BackboneModel::unfreeze_trunk() {
    for (Parameter* p : trunk_parameters()) p->frozen = false;
    trunk_frozen_ = false;
}

void BackboneModel::replace_final_layer(std::vector<std::string> classes, std::uint64_t seed) {
    if (classes.empty()) throw DataError("replace_final_layer: no classes");
    std::mt19937_64 rng(seed);
    head = nn::Linear("backbone.head", std::size_t(config_.hidden), classes.size(), rng, dtype_);
    classes_ = std::move(classes);
}

Checkpoint BackboneModel::to_checkpoint() {
    Checkpoint ckpt;
    ckpt.metadata = nlohmann::json{{"kind", "backbone"},
                                   {"config", config_},
                                   {"classes", classes_},
                                   {"channel_mean", channel_mean},
                                   {"trunk_frozen", trunk_frozen_}}
                        .dump();
    ckpt.entries = state();
    return ckpt;
}

BackboneModel BackboneModel::from_checkpoint(const Checkpoint& checkpoint, DType dtype) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(checkpoint.metadata);
        if (meta.value("kind", "") != "backbone") throw DataError("checkpoint does not hold a backbone");
        BackboneModel model(meta.at("config").get<BackboneConfig>(),
                            meta.at("classes").get<std::vector<std::string>>(), 0, dtype);
        model.channel_mean = meta.at("channel_mean").get<std::array<double, 3>>();
        assign_state(model.state(), checkpoint);
        if (meta.value("trunk_frozen", false)) model.freeze_trunk();
        const std::vector<std::uint8_t> bytes = encode_checkpoint(checkpoint);
        model.origin = sha256_hex(bytes.data(), bytes.size());
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("backbone checkpoint: bad metadata: ") + e.what());
    }
}

void freeze_trunk(BackboneModel& model) { model.freeze_trunk(); }

void replace_final_layer(BackboneModel& model, std::size_t num_classes, std::uint64_t seed) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < num_classes; ++i) names.push_back("class" + std::to_string(i));
    model.replace_final_layer(std::move(names), seed);
}

std::vector<LogitVector> backbone_logits(BackboneModel& model, const Tensor& images) {
    NoGradGuard guard;
    const Tensor logits = model.logits(images, Mode::eval);
    const std::vector<double> v = logits.to_vector();
    const std::size_t k = logits.dim(1);
    std::vector<LogitVector> out(logits.dim(0));
    for (std::size_t b = 0; b < out.size(); ++b) {
        out[b].scores.assign(v.begin() + long(b * k), v.begin() + long((b + 1) * k));
        out[b].classes = model.classes();
    }
    return out;
}

Tensor LabeledImages::batch(const std::vector<std::size_t>& indices) const {
    std::vector<Tensor> items;
    items.reserve(indices.size());
    for (std::size_t i : indices) items.push_back(images.at(i));
    return stack(items);
}

Tensor color_to_tensor(const ColorImage& img, DType dtype) {
    Tensor t = Tensor::zeros({3, img.height, img.width}, dtype);
    const std::size_t n = img.pixels();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) t.set(std::size_t(c) * n + i, img.data[3 * i + std::size_t(c)]);
    return t;
}

LabeledImages load_rgb_split(const DatasetManifest& manifest, Split split, int size, DType dtype) {
    LabeledImages out;
    out.classes = manifest.classes();
    const auto index = manifest.class_index();
    for (const ManifestEntry* e : manifest.in_split(split)) {
        if (!e->rgb_path) throw DataError("manifest entry " + e->depth_path.string() + " has no rgb_path");
        const ColorImage img = load_color(manifest.resolve(*e->rgb_path));
        out.images.push_back(color_to_tensor(resize_bilinear(img, std::size_t(size), std::size_t(size)), dtype));
        out.labels.push_back(index.at(e->class_label));
    }
    return out;
}

std::array<double, 3> channel_means(const std::vector<Tensor>& images) {
    std::array<double, 3> acc{0, 0, 0};
    std::size_t count = 0;
    for (const Tensor& t : images) {
        const std::vector<double> v = t.to_vector();
        const std::size_t n = v.size() / 3;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < n; ++i) acc[c] += v[c * n + i];
        count += n;
    }
    if (count == 0) throw DataError("channel_means: no images");
    for (double& a : acc) a /= 255.0 * double(count);
    return acc;
}

Tensor logits_for(BackboneModel& model, const std::vector<Tensor>& images, std::size_t chunk) {
    NoGradGuard guard;
    std::vector<double> all;
    for (std::size_t i = 0; i < images.size(); i += chunk) {
        const std::vector<Tensor> part(images.begin() + long(i),
                                       images.begin() + long(std::min(images.size(), i + chunk)));
        const std::vector<double> v = model.logits(stack(part), Mode::eval).to_vector();
        all.insert(all.end(), v.begin(), v.end());
    }
    return Tensor::from_vector({images.size(), model.num_classes()}, all);
}

PretrainResult pretrain_backbone(const DatasetManifest& rgb_manifest, const BackboneConfig& config,
                                 const TrainConfig& train_config, double min_val_accuracy) {
    train_config.validate();
    const std::vector<std::string> classes = rgb_manifest.classes();
    if (classes.size() < 2)
        throw DataError("pretrain_backbone: need at least 2 classes, manifest has " + std::to_string(classes.size()));
    DatasetManifest manifest = rgb_manifest;
    if (manifest.count(Split::val) == 0) manifest = make_instance_split(manifest, train_config.seed, 0.1);
    const LabeledImages train = load_rgb_split(manifest, Split::train, config.input_size);
    const LabeledImages val = load_rgb_split(manifest, Split::val, config.input_size);
    if (train.size() == 0 || val.size() == 0) throw DataError("pretrain_backbone: empty train or val split");

    PretrainResult result{BackboneModel(config, classes, train_config.seed), {}, 0.0};
    BackboneModel& model = result.model;
    model.channel_mean = channel_means(train.images);
    const std::vector<Parameter*> params = model.parameters();
    OptimizerState opt = train_config.make_optimizer();
    const LrSchedule schedule = train_config.schedule();
    std::mt19937_64 rng(train_config.seed ^ 0x5eedba5eULL);
    Checkpoint best;

    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        EpochLog log{epoch, lr_at(schedule, epoch), 0, 0, 0};
        opt.set_learning_rate(log.lr);
        std::size_t hits = 0;
        for (const auto& idx : make_batches(train.size(), train_config.batch_size, rng)) {
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train.labels[i]);
            zero_grads(params);
            const Tensor logits = model.logits(train.batch(idx), Mode::train);
            const Tensor loss = softmax_cross_entropy(logits, labels);
            loss.backward();
            optimizer_step(opt, params);
            log.train_loss += loss.item() * double(idx.size());
            const std::vector<int> pred = predict(logits);
            for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
        }
        log.train_loss /= double(train.size());
        log.train_accuracy = double(hits) / double(train.size());
        log.val_accuracy = accuracy(predict(logits_for(model, val.images)), val.labels);
        result.history.epochs.push_back(log);
        if (result.history.best_epoch < 0 || log.val_accuracy > result.history.best_val_accuracy) {
            result.history.best_epoch = epoch;
            result.history.best_val_accuracy = log.val_accuracy;
            best = model.to_checkpoint();
            for (NamedTensor& e : best.entries) e.tensor = e.tensor.clone();
        }
    }
    assign_state(model.state(), best);
    result.val_accuracy = result.history.best_val_accuracy;
    if (result.val_accuracy < min_val_accuracy)
        throw TrainingError("backbone pretraining reached validation accuracy " + format_real(result.val_accuracy) +
                            " < " + format_real(min_val_accuracy) + "; train for more epochs or on more images");
    return result;
}

}  // namespace deco
