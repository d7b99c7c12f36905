#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "deco/backbone.hpp"
#include "deco/synth.hpp"

using namespace deco;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("deco_test_backbone_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

BackboneConfig small_config() {
    BackboneConfig c;
    c.input_size = 16;
    c.widths = {4, 8, 8};
    c.hidden = 12;
    return c;
}

Tensor random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform({batch, 3, size, size}, rng, 0.0, 255.0);
}

DatasetManifest small_rgb_set(const std::string& name, std::vector<std::string> classes) {
    SynthConfig sc;
    sc.classes = std::move(classes);
    sc.instances_per_class = 2;
    sc.samples_per_instance = 6;
    sc.size = 16;
    sc.seed = 3;
    return gen_synth_depth_dataset(sc, scratch(name));
}

}  // namespace

TEST(BackboneConfig, Validation) {
    EXPECT_NO_THROW(BackboneConfig{}.validate());
    BackboneConfig c;
    c.input_size = 60;
    EXPECT_THROW(c.validate(), ConfigError);
    c = BackboneConfig{};
    c.widths.clear();
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(BackboneConfig{}.trunk_extent(), 8);
    EXPECT_THROW(nlohmann::json::parse(R"({"depth": 3})").get<BackboneConfig>(), ConfigError);
}

TEST(Backbone, DefaultLayerShapes) {
    BackboneModel m(BackboneConfig{}, {"a", "b", "c"}, 1);
    ASSERT_EQ(m.stages.size(), 3u);
    EXPECT_EQ(m.stages[0].conv.weight.tensor.shape(), (Shape{16, 3, 3, 3}));
    EXPECT_EQ(m.stages[1].conv.weight.tensor.shape(), (Shape{32, 16, 3, 3}));
    EXPECT_EQ(m.stages[2].conv.weight.tensor.shape(), (Shape{64, 32, 3, 3}));
    EXPECT_EQ(m.fc.weight.tensor.shape(), (Shape{128, 64 * 8 * 8}));
    EXPECT_EQ(m.head.weight.tensor.shape(), (Shape{3, 128}));
}

TEST(Backbone, LogitsShapeAndNormalisation) {
    BackboneModel m(small_config(), {"a", "b", "c", "d"}, 2);
    const auto rows = backbone_logits(m, random_images(5, 16, 1));
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.scores.size(), 4u);
        EXPECT_EQ(r.classes, m.classes());
    }
    NoGradGuard g;
    for (const auto& p : softmax_rows(m.logits(random_images(5, 16, 1), Mode::eval))) {
        double s = 0;
        for (double v : p) s += v;
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Backbone, IdenticalImagesGiveIdenticalRows) {
    BackboneModel m(small_config(), {"a", "b"}, 2);
    const Tensor one = random_images(1, 16, 4);
    const Tensor both = stack(std::vector<Tensor>{one, one});
    const auto rows = backbone_logits(m, both);
    EXPECT_EQ(rows[0].scores, rows[1].scores);
}

TEST(Backbone, WrongInputShapeIsRejected) {
    BackboneModel m(small_config(), {"a", "b"}, 2);
    EXPECT_THROW(m.logits(random_images(1, 32, 1), Mode::eval), ShapeError);
    std::mt19937_64 rng(1);
    EXPECT_THROW(m.logits(Tensor::uniform({1, 1, 16, 16}, rng, 0, 1), Mode::eval), ShapeError);
}

TEST(Backbone, PreprocessingSubtractsChannelMean) {
    BackboneModel m(small_config(), {"a", "b"}, 2);
    m.channel_mean = {0.25, 0.5, 0.75};
    const Tensor x = random_images(2, 16, 5);
    const std::vector<double> in = x.to_vector(), out = m.preprocess(x).to_vector();
    const std::size_t plane = 16 * 16;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t c = (i / plane) % 3;
        EXPECT_NEAR(out[i], in[i] / 255.0 - m.channel_mean[c], 1e-15);
    }
}

TEST(Backbone, ChannelMeansOracle) {
    std::vector<Tensor> imgs{Tensor::full({3, 2, 2}, 51.0), Tensor::full({3, 2, 2}, 102.0)};
    imgs[1].set(8, 255.0);  // one blue pixel
    const auto m = channel_means(imgs);
    EXPECT_NEAR(m[0], 0.3, 1e-15);
    EXPECT_NEAR(m[1], 0.3, 1e-15);
    EXPECT_NEAR(m[2], (4 * 51.0 + 3 * 102.0 + 255.0) / 8.0 / 255.0, 1e-15);
}

TEST(BackboneFreeze, TrunkBitwiseInvariantUnderEverySolver) {
    for (SolverKind kind : {SolverKind::sgd_momentum, SolverKind::nesterov, SolverKind::adam}) {
        BackboneModel m(small_config(), {"a", "b", "c"}, 7);
        m.freeze_trunk();
        EXPECT_TRUE(m.trunk_frozen());
        const std::string trunk = m.trunk_checksum(), head = m.head_checksum();
        OptimizerState opt = kind == SolverKind::adam ? OptimizerState::adam(0.01) : OptimizerState(kind, 0.05);
        const auto params = m.parameters();
        std::mt19937_64 rng(9);
        for (int step = 0; step < 100; ++step) {
            const std::vector<int> labels{int(rng() % 3), int(rng() % 3), int(rng() % 3), int(rng() % 3)};
            zero_grads(params);
            softmax_cross_entropy(m.logits(random_images(4, 16, rng()), Mode::train), labels).backward();
            optimizer_step(opt, params);
        }
        EXPECT_EQ(m.trunk_checksum(), trunk) << to_string(kind);
        EXPECT_NE(m.head_checksum(), head) << to_string(kind);
    }
}

TEST(BackboneFreeze, UnfrozenTrunkMoves) {
    BackboneModel m(small_config(), {"a", "b"}, 7);
    const std::string trunk = m.trunk_checksum();
    const auto params = m.parameters();
    OptimizerState opt(SolverKind::sgd_momentum, 0.01);
    const std::vector<int> labels{0, 1};
    softmax_cross_entropy(m.logits(random_images(2, 16, 3), Mode::train), labels).backward();
    optimizer_step(opt, params);
    EXPECT_NE(m.trunk_checksum(), trunk);
    m.freeze_trunk();
    m.unfreeze_trunk();
    for (Parameter* p : m.trunk_parameters()) EXPECT_FALSE(p->frozen);
}

TEST(BackboneHead, ReplaceFinalLayer) {
    BackboneModel m(BackboneConfig{}, {"a", "b"}, 7);
    m.freeze_trunk();
    const std::string trunk = m.trunk_checksum();
    replace_final_layer(m, 51, 5);
    EXPECT_EQ(m.head.weight.tensor.shape(), (Shape{51, 128}));
    EXPECT_EQ(m.num_classes(), 51u);
    EXPECT_EQ(m.trunk_checksum(), trunk);
    EXPECT_TRUE(m.trunk_frozen());
    const std::string first = m.head_checksum();
    replace_final_layer(m, 51, 5);
    EXPECT_EQ(m.head_checksum(), first);
    replace_final_layer(m, 51, 6);
    EXPECT_NE(m.head_checksum(), first);
}

TEST(BackboneCheckpoint, RoundTripKeepsEverything) {
    BackboneModel m(small_config(), {"x", "y", "z"}, 8);
    m.channel_mean = {0.1, 0.2, 0.3};
    {
        NoGradGuard g;
        m.logits(random_images(4, 16, 2), Mode::train);
    }
    m.freeze_trunk();
    const Checkpoint ckpt = decode_checkpoint(encode_checkpoint(m.to_checkpoint()));
    BackboneModel back = BackboneModel::from_checkpoint(ckpt);
    EXPECT_EQ(back.classes(), m.classes());
    EXPECT_EQ(back.channel_mean, m.channel_mean);
    EXPECT_TRUE(back.trunk_frozen());
    EXPECT_EQ(back.trunk_checksum(), m.trunk_checksum());
    EXPECT_EQ(back.origin.size(), 64u);
    const Tensor x = random_images(3, 16, 6);
    NoGradGuard g;
    EXPECT_EQ(back.logits(x, Mode::eval).to_vector(), m.logits(x, Mode::eval).to_vector());
}

TEST(Pretrain, RejectsSingleClass) {
    const DatasetManifest man = small_rgb_set("one", {"box"});
    TrainConfig tc = TrainConfig::defaults(Phase::pretrain);
    tc.epochs = 1;
    EXPECT_THROW(pretrain_backbone(man, small_config(), tc, 0.0), DataError);
}

TEST(Pretrain, DeterministicAndGated) {
    const DatasetManifest man = small_rgb_set("two", {"box", "torus"});
    TrainConfig tc = TrainConfig::defaults(Phase::pretrain);
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 4;
    PretrainResult a = pretrain_backbone(man, small_config(), tc, 0.0);
    PretrainResult b = pretrain_backbone(man, small_config(), tc, 0.0);
    EXPECT_EQ(encode_checkpoint(a.model.to_checkpoint()), encode_checkpoint(b.model.to_checkpoint()));
    EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
    ASSERT_EQ(a.history.epochs.size(), 3u);
    EXPECT_DOUBLE_EQ(a.history.epochs[0].lr, 0.001);
    EXPECT_DOUBLE_EQ(a.val_accuracy, a.history.best_val_accuracy);
    EXPECT_THROW(pretrain_backbone(man, small_config(), tc, 1.01), TrainingError);
}
