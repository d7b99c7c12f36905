#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/checkpoint.hpp"
#include "deco/image.hpp"
#include "deco/layers.hpp"
#include "deco/manifest.hpp"
#include "deco/training.hpp"

namespace deco {

struct BackboneConfig {
    int input_size = 64;
    std::vector<int> widths{16, 32, 64};
    int hidden = 128;
    double leaky_slope = 0.2;

    // Spatial extent after the pooled stages.
    int trunk_extent() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

struct BackboneStage {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
};

// Small RGB classifier standing in for an ImageNet network:
//   per stage conv3 (p1) -> BN -> leaky -> maxpool 2; fc -> hidden, leaky; head hidden -> K.
// The trunk is every stage plus fc; only the head is replaced for a new label set.
// Input images are 0..255; preprocessing divides by 255 and subtracts channel_mean.
class BackboneModel {
public:
    BackboneModel() = default;
    BackboneModel(const BackboneConfig& config, std::vector<std::string> classes, std::uint64_t seed,
                  DType dtype = DType::f64);

    const BackboneConfig& config() const { return config_; }
    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t num_classes() const { return classes_.size(); }
    DType dtype() const { return dtype_; }

    Tensor preprocess(const Tensor& images) const;
    // Penultimate activations [B, hidden]. A frozen trunk always runs batch-norm in eval mode.
    Tensor features(const Tensor& images, Mode mode);
    Tensor classify(const Tensor& features) const;
    Tensor logits(const Tensor& images, Mode mode);

    std::vector<Parameter*> trunk_parameters();
    std::vector<Parameter*> head_parameters();
    std::vector<Parameter*> parameters();
    std::vector<NamedTensor> trunk_state();
    std::vector<NamedTensor> state();
    std::string trunk_checksum();
    std::string head_checksum();

    void freeze_trunk();
    void unfreeze_trunk();
    bool trunk_frozen() const { return trunk_frozen_; }

    // New He-initialised head for the given labels; the trunk is untouched.
    void replace_final_layer(std::vector<std::string> classes, std::uint64_t seed);

    Checkpoint to_checkpoint();
    static BackboneModel from_checkpoint(const Checkpoint& checkpoint, DType dtype = DType::f64);

    std::array<double, 3> channel_mean{0.0, 0.0, 0.0};
    // SHA-256 of the encoded checkpoint this model came from, empty for a fresh model.
    std::string origin;

    std::vector<BackboneStage> stages;
    nn::Linear fc;
    nn::Linear head;

private:
    BackboneConfig config_;
    std::vector<std::string> classes_;
    DType dtype_ = DType::f64;
    bool trunk_frozen_ = false;
};

void freeze_trunk(BackboneModel& model);
void replace_final_layer(BackboneModel& model, std::size_t num_classes, std::uint64_t seed);

struct LogitVector {
    std::vector<double> scores;
    std::vector<std::string> classes;
};

// Eval-mode logits per sample of a [B,3,S,S] batch.
std::vector<LogitVector> backbone_logits(BackboneModel& model, const Tensor& images);

// Samples as [C,S,S] tensors with integer labels into a class list.
struct LabeledImages {
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::string> classes;

    std::size_t size() const { return labels.size(); }
    Tensor batch(const std::vector<std::size_t>& indices) const;
};

// [3,H,W] tensor with values 0..255.
Tensor color_to_tensor(const ColorImage& img, DType dtype = DType::f64);

// RGB images of one split, bilinear-resized to size x size, values 0..255.
LabeledImages load_rgb_split(const DatasetManifest& manifest, Split split, int size, DType dtype = DType::f64);

// Per-channel mean of x/255 over a set of [3,S,S] images.
std::array<double, 3> channel_means(const std::vector<Tensor>& images);

// Eval-mode logits for many samples, in chunks.
Tensor logits_for(BackboneModel& model, const std::vector<Tensor>& images, std::size_t chunk = 64);

struct PretrainResult {
    BackboneModel model;
    TrainHistory history;
    double val_accuracy = 0;
};

// Trains the whole backbone on the manifest's RGB images (train split) and selects the best epoch on
// the val split; a manifest without val entries gets a 10% stratified one from train_config.seed.
// Fewer than two classes is a DataError; final val accuracy below min_val_accuracy a TrainingError.
PretrainResult pretrain_backbone(const DatasetManifest& rgb_manifest, const BackboneConfig& config,
                                 const TrainConfig& train_config, double min_val_accuracy = 0.9);

}  // namespace deco
