#include "deco/deco.hpp"

#include <random>

#include "deco/json_fields.hpp"

namespace deco {

void DecoConfig::validate() const {
    if (input_size < 4 || input_size % 4 != 0)
        throw ConfigError("deco.input_size must be a positive multiple of 4, got " + std::to_string(input_size));
    if (num_blocks < 1) throw ConfigError("deco.num_blocks must be >= 1");
    if (num_filters < 1) throw ConfigError("deco.num_filters must be >= 1");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("deco.leaky_slope must be in [0,1)");
    if (output_activation != "sigmoid_255")
        throw ConfigError("deco.output_activation: unsupported '" + output_activation + "'");
}

void to_json(nlohmann::json& j, const DecoConfig& c) {
    j = nlohmann::json{{"input_size", c.input_size},
                       {"num_blocks", c.num_blocks},
                       {"num_filters", c.num_filters},
                       {"leaky_slope", c.leaky_slope},
                       {"output_activation", c.output_activation}};
}

void from_json(const nlohmann::json& j, DecoConfig& c) {
    using namespace json_fields;
    require_object(j, {"input_size", "num_blocks", "num_filters", "leaky_slope", "output_activation"}, "deco");
    read(j, "input_size", c.input_size, "deco");
    read(j, "num_blocks", c.num_blocks, "deco");
    read(j, "num_filters", c.num_filters, "deco");
    read(j, "leaky_slope", c.leaky_slope, "deco");
    read(j, "output_activation", c.output_activation, "deco");
}

DecoModel::DecoModel(const DecoConfig& config, std::uint64_t seed, DType dtype) : config_(config), dtype_(dtype) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto f = std::size_t(config.num_filters);
    stem_conv = nn::Conv2d("deco.stem.conv", 1, f, 7, 2, 3, false, rng, dtype);
    stem_bn = nn::BatchNorm2d("deco.stem.bn", f, dtype);
    blocks.reserve(std::size_t(config.num_blocks));
    for (int b = 0; b < config.num_blocks; ++b) {
        const std::string p = "deco.block" + std::to_string(b);
        ResidualBlock blk;
        blk.conv1 = nn::Conv2d(p + ".conv1", f, f, 3, 1, 1, false, rng, dtype);
        blk.bn1 = nn::BatchNorm2d(p + ".bn1", f, dtype);
        blk.conv2 = nn::Conv2d(p + ".conv2", f, f, 3, 1, 1, false, rng, dtype);
        blk.bn2 = nn::BatchNorm2d(p + ".bn2", f, dtype);
        blocks.push_back(std::move(blk));
    }
    head = nn::Conv2d("deco.head", f, 3, 3, 1, 1, true, rng, dtype);
    upsampler = nn::TransposedConv2d("deco.upsample", 3, 3, 8, 4, 2, dtype);
}

Tensor DecoModel::stem(const Tensor& x, Mode mode) {
    const std::size_t s = std::size_t(config_.input_size);
    const bool ok = (x.ndim() == 4 && x.dim(1) == 1 && x.dim(2) == s && x.dim(3) == s) ||
                    (x.ndim() == 3 && x.dim(0) == 1 && x.dim(1) == s && x.dim(2) == s);
    if (!ok)
        throw ShapeError("deco: expected [B,1," + std::to_string(s) + "," + std::to_string(s) + "] input, got " +
                         shape_str(x.shape()));
    Tensor y = stem_bn.forward(stem_conv.forward(x), mode);
    return maxpool2d(leaky_relu(y, config_.leaky_slope), 3, 2, 1);
}

Tensor DecoModel::block(std::size_t index, const Tensor& x, Mode mode) {
    ResidualBlock& b = blocks.at(index);
    Tensor y = leaky_relu(b.bn1.forward(b.conv1.forward(x), mode), config_.leaky_slope);
    y = b.bn2.forward(b.conv2.forward(y), mode);
    return leaky_relu(add(y, x), config_.leaky_slope);
}

Tensor DecoModel::forward(const Tensor& x, Mode mode) {
    Tensor y = stem(x, mode);
    for (std::size_t i = 0; i < blocks.size(); ++i) y = block(i, y, mode);
    y = upsampler.forward(head.forward(y));
    return scale(sigmoid(y), 255.0);
}

std::vector<Parameter*> DecoModel::parameters() {
    std::vector<Parameter*> out;
    stem_conv.collect(out);
    stem_bn.collect(out);
    for (ResidualBlock& b : blocks) {
        b.conv1.collect(out);
        b.bn1.collect(out);
        b.conv2.collect(out);
        b.bn2.collect(out);
    }
    head.collect(out);
    upsampler.collect(out);
    return out;
}

std::vector<NamedTensor> DecoModel::state() {
    std::vector<NamedTensor> buffers;
    stem_bn.collect_buffers(buffers);
    for (const ResidualBlock& b : blocks) {
        b.bn1.collect_buffers(buffers);
        b.bn2.collect_buffers(buffers);
    }
    return nn::state_entries(parameters(), buffers);
}

std::string DecoModel::checksum() { return state_checksum(state()); }

void DecoModel::set_frozen(bool frozen) {
    for (Parameter* p : parameters()) p->frozen = frozen;
}

bool DecoModel::frozen() {
    for (Parameter* p : parameters())
        if (!p->frozen) return false;
    return true;
}

Checkpoint DecoModel::to_checkpoint() {
    Checkpoint ckpt;
    ckpt.metadata = nlohmann::json{{"kind", "deco"}, {"config", config_}}.dump();
    ckpt.entries = state();
    return ckpt;
}

DecoModel DecoModel::from_checkpoint(const Checkpoint& checkpoint, DType dtype) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(checkpoint.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("deco checkpoint: bad metadata: ") + e.what());
    }
    if (meta.value("kind", "") != "deco") throw DataError("checkpoint does not hold a deco model");
    DecoModel model(meta.at("config").get<DecoConfig>(), 0, dtype);
    assign_state(model.state(), checkpoint);
    return model;
}

DecoModel build_deco(const DecoConfig& config, std::uint64_t seed, DType dtype) {
    return DecoModel(config, seed, dtype);
}

Tensor deco_forward(DecoModel& model, const Tensor& depth_gray, Mode mode) { return model.forward(depth_gray, mode); }

Tensor gray_to_input(const GrayImage& gray, int size, DType dtype) {
    const GrayImage g = resize_bilinear(gray, std::size_t(size), std::size_t(size));
    Tensor t = Tensor::zeros({1, g.height, g.width}, dtype);
    for (std::size_t i = 0; i < g.data.size(); ++i) t.set(i, g.data[i] / 255.0);
    return t;
}

ColorImage tensor_to_color(const Tensor& image) {
    const bool batched = image.ndim() == 4;
    if (!(image.ndim() == 3 || (batched && image.dim(0) == 1)) || image.dim(batched ? 1 : 0) != 3)
        throw ShapeError("tensor_to_color: expected [3,H,W], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(batched ? 2 : 1), w = image.dim(batched ? 3 : 2);
    ColorImage out(w, h);
    const std::vector<double> v = image.to_vector();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < w * h; ++i) out.data[3 * i + std::size_t(c)] = to_u8(v[std::size_t(c) * w * h + i]);
    return out;
}

ColorImage colorize_image(DecoModel& model, const GrayImage& gray) {
    NoGradGuard guard;
    return tensor_to_color(model.forward(gray_to_input(gray, model.config().input_size, model.dtype()), Mode::eval));
}

}  // namespace deco
