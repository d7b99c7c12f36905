#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/checkpoint.hpp"
#include "deco/image.hpp"
#include "deco/layers.hpp"

namespace deco {

struct DecoConfig {
    int input_size = 64;
    int num_blocks = 8;
    int num_filters = 64;
    double leaky_slope = 0.2;
    std::string output_activation = "sigmoid_255";

    // Stem output extent, input_size / 4.
    int stem_size() const { return input_size / 4; }
    void validate() const;
};

void to_json(nlohmann::json& j, const DecoConfig& c);
void from_json(const nlohmann::json& j, DecoConfig& c);

struct ResidualBlock {
    nn::Conv2d conv1;
    nn::BatchNorm2d bn1;
    nn::Conv2d conv2;
    nn::BatchNorm2d bn2;
};

// Depth colorization network:
//   stem   conv 1->F k7 s2 p3, BN, leaky, maxpool k3 s2 p1     S -> S/4
//   blocks conv3-BN-leaky-conv3-BN + identity, leaky
//   head   conv F->3 k3 p1 (bias)
//   up     transposed conv 3->3 k8 s4 p2, bilinear init         S/4 -> S
//   255 * sigmoid
// Parameters live inside the model; do not copy a model while an optimizer holds its pointers.
class DecoModel {
public:
    DecoModel() = default;
    DecoModel(const DecoConfig& config, std::uint64_t seed, DType dtype = DType::f64);

    const DecoConfig& config() const { return config_; }
    DType dtype() const { return dtype_; }

    // [B,1,S,S] or [1,S,S] with values in [0,1].
    Tensor stem(const Tensor& x, Mode mode);
    Tensor block(std::size_t index, const Tensor& x, Mode mode);
    Tensor forward(const Tensor& x, Mode mode);

    std::vector<Parameter*> parameters();
    std::vector<NamedTensor> state();
    std::string checksum();

    void set_frozen(bool frozen);
    // True when every parameter is frozen.
    bool frozen();

    Checkpoint to_checkpoint();
    static DecoModel from_checkpoint(const Checkpoint& checkpoint, DType dtype = DType::f64);

    nn::Conv2d stem_conv;
    nn::BatchNorm2d stem_bn;
    std::vector<ResidualBlock> blocks;
    nn::Conv2d head;
    nn::TransposedConv2d upsampler;

private:
    DecoConfig config_;
    DType dtype_ = DType::f64;
};

DecoModel build_deco(const DecoConfig& config, std::uint64_t seed, DType dtype = DType::f64);
Tensor deco_forward(DecoModel& model, const Tensor& depth_gray, Mode mode);

// Gray image -> [1,S,S] tensor in [0,1] (bilinear resize to S first when needed).
Tensor gray_to_input(const GrayImage& gray, int size, DType dtype = DType::f64);
// [3,S,S] (or [1,3,S,S]) tensor in 0..255 -> 8-bit image.
ColorImage tensor_to_color(const Tensor& image);

// Eval-mode forward of one image; output is input_size x input_size.
ColorImage colorize_image(DecoModel& model, const GrayImage& gray);

}  // namespace deco
