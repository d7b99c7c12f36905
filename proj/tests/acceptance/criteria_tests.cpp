// Acceptance-only checks. The runner in main.cpp groups these, together with the unit suites
// compiled into the same binary, into the numbered criteria.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <unistd.h>

#include <boost/math/distributions/binomial.hpp>
#include <gtest/gtest.h>

#include "deco/commands.hpp"
#include "deco/pipeline.hpp"
#include "deco/synth.hpp"

namespace fs = std::filesystem;
using namespace deco;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_root() { return fs::temp_directory_path() / ("deco_acceptance_" + std::to_string(::getpid())); }

class ScratchCleanup : public ::testing::Environment {
public:
    void TearDown() override { fs::remove_all(scratch_root()); }
};

[[maybe_unused]] ::testing::Environment* const g_cleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

fs::path scratch(const std::string& name) {
    const fs::path p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[e.path().lexically_relative(root).generic_string()] = slurp(e.path());
    return files;
}

const fs::path kSmokeConfig = fs::path(DECO_SOURCE_DIR) / "configs" / "smoke.json";

void run_chain(const fs::path& root, const std::vector<Command>& commands) {
    ::setenv("DECO_OUTPUT_ROOT", root.c_str(), 1);
    for (Command c : commands) run_command(CommandOptions{c, kSmokeConfig, std::nullopt, std::nullopt});
    ::unsetenv("DECO_OUTPUT_ROOT");
}

// Tiny fixtures for the protocol checks.
DatasetManifest tiny_reference() {
    SynthConfig s;
    s.classes = {"spherecap", "box", "cone"};
    s.instances_per_class = 2;
    s.samples_per_instance = 4;
    s.size = 16;
    s.seed = 21;
    return gen_synth_depth_dataset(s, scratch("protocol_reference"));
}

DatasetManifest tiny_testbed() {
    SynthConfig s;
    s.classes = {"cylinder", "pyramid"};
    s.instances_per_class = 3;
    s.samples_per_instance = 4;
    s.size = 16;
    s.seed = 22;
    return make_instance_split(gen_synth_depth_dataset(s, scratch("protocol_testbed")), 3, 0.25, SplitMode::instance);
}

BackboneModel tiny_backbone(const std::vector<std::string>& classes) {
    BackboneConfig c;
    c.input_size = 16;
    c.widths = {4, 8, 8};
    c.hidden = 12;
    return BackboneModel(c, classes, 5);
}

DecoConfig tiny_deco() {
    DecoConfig c;
    c.input_size = 16;
    c.num_blocks = 2;
    c.num_filters = 8;
    return c;
}

void expect_logged_schedule(const TrainHistory& h, const TrainConfig& cfg) {
    ASSERT_EQ(int(h.epochs.size()), cfg.epochs);
    const LrSchedule s = cfg.schedule();
    for (const EpochLog& e : h.epochs) EXPECT_EQ(e.lr, lr_at(s, e.epoch)) << "epoch " << e.epoch;
}

}  // namespace

TEST(AcceptanceShapeLaw, FullAblationGridAtEverySize) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int size : {16, 32, 64, 228}) {
        for (int blocks : {4, 8, 16}) {
            for (int filters : {32, 64, 128}) {
                DecoConfig c;
                c.input_size = size;
                c.num_blocks = blocks;
                c.num_filters = filters;
                DecoModel m(c, std::uint64_t(size * 1000 + blocks * 10 + filters));
                NoGradGuard guard;
                const Tensor out = m.forward(Tensor::full({1, std::size_t(size), std::size_t(size)}, 0.5), Mode::eval);
                EXPECT_EQ(out.shape(), (Shape{3, std::size_t(size), std::size_t(size)}))
                    << "S=" << size << " blocks=" << blocks << " filters=" << filters;
            }
        }
    }
    const double elapsed = seconds_since(t0);
    std::cout << "  shape law: 36 builds + forwards in " << elapsed << " s\n";
    EXPECT_LT(elapsed, 300.0);
}

TEST(AcceptanceProtocol, PhaseOneLogsTheDefaultSchedule) {
    const TrainConfig cfg = TrainConfig::defaults(Phase::phase1);
    ASSERT_EQ(cfg.base_lr, 0.007);
    ASSERT_EQ(cfg.epochs, 50);
    ASSERT_EQ(cfg.step_fraction, 0.45);
    BackboneModel b = tiny_backbone({"a", "b", "c", "d"});
    b.freeze_trunk();
    const std::string trunk = b.trunk_checksum();
    DecoModel deco(tiny_deco(), 9);
    const Phase1Result r = train_deco_phase1(deco, b, tiny_reference(), cfg);
    expect_logged_schedule(r.history, cfg);
    EXPECT_EQ(r.history.epochs.at(21).lr, 0.007);
    EXPECT_EQ(r.history.epochs.at(22).lr, 0.007 * 0.1);
    EXPECT_EQ(b.trunk_checksum(), trunk);
}

TEST(AcceptanceProtocol, PhaseTwoAndFinetuneContracts) {
    BackboneModel b = tiny_backbone({"a", "b", "c"});
    b.freeze_trunk();
    DecoModel deco(tiny_deco(), 10);
    TrainConfig p1 = TrainConfig::defaults(Phase::phase1);
    p1.epochs = 2;
    train_deco_phase1(deco, b, tiny_reference(), p1);
    deco.set_frozen(true);
    const std::string deco_sum = deco.checksum();
    const Mapping m{MappingKind::deco, &deco, {}};
    const DatasetManifest testbed = tiny_testbed();

    TrainConfig p2 = TrainConfig::defaults(Phase::phase2);
    p2.epochs = 3;
    const std::string trunk = b.trunk_checksum();
    transfer_phase2(m, b, testbed, p2);
    EXPECT_EQ(deco.checksum(), deco_sum);
    EXPECT_EQ(b.trunk_checksum(), trunk);

    const TrainConfig ft = TrainConfig::defaults(Phase::finetune);
    ASSERT_EQ(ft.base_lr, 0.001);
    ASSERT_EQ(ft.epochs, 90);
    const TransferResult r = finetune(m, b, testbed, ft);
    expect_logged_schedule(r.history, ft);
    EXPECT_EQ(r.history.epochs.at(39).lr, 0.001);
    EXPECT_EQ(r.history.epochs.at(40).lr, 0.001 * 0.1);
    EXPECT_EQ(deco.checksum(), deco_sum);
    EXPECT_NE(b.trunk_checksum(), trunk);
}

// Desk-scale learning gates share one pretrained backbone and one phase-1 network.
namespace {
std::optional<Checkpoint> g_backbone;
std::optional<Checkpoint> g_deco;
}  // namespace

TEST(AcceptanceLearning, GateA_PretrainFiveClassRgb) {
    SynthConfig s;  // 5 classes x 4 instances x 25 samples = 500 images at 64x64
    s.seed = 1;
    const DatasetManifest m = gen_synth_depth_dataset(s, scratch("gate_a"));
    ASSERT_EQ(m.entries.size(), 500u);
    ASSERT_EQ(m.classes().size(), 5u);
    TrainConfig cfg = TrainConfig::defaults(Phase::pretrain);
    cfg.seed = 1;
    const auto t0 = std::chrono::steady_clock::now();
    PretrainResult r = pretrain_backbone(m, BackboneConfig{}, cfg, 0.0);
    const double elapsed = seconds_since(t0);
    std::cout << "  gate a: val accuracy " << r.val_accuracy << " in " << elapsed << " s\n";
    EXPECT_GE(r.val_accuracy, 0.90);
    EXPECT_LT(elapsed, 900.0);
    g_backbone = r.model.to_checkpoint();
}

TEST(AcceptanceLearning, GateB_PhaseOneOverfitThreeClassDepth) {
    ASSERT_TRUE(g_backbone) << "needs gate a";
    SynthConfig s;
    s.classes = {"spherecap", "box", "cone"};  // 3 x 4 x 25 = 300 depth maps
    s.emit_rgb = false;
    s.seed = 7;
    const DatasetManifest m = gen_synth_depth_dataset(s, scratch("gate_b"));
    ASSERT_EQ(m.entries.size(), 300u);
    BackboneModel b = BackboneModel::from_checkpoint(*g_backbone);
    b.freeze_trunk();
    DecoConfig dc;
    dc.num_blocks = 2;
    dc.num_filters = 16;
    DecoModel deco(dc, 3);
    TrainConfig cfg = TrainConfig::defaults(Phase::phase1);
    cfg.seed = 3;
    const auto t0 = std::chrono::steady_clock::now();
    const Phase1Result r = train_deco_phase1(deco, b, m, cfg);
    const double elapsed = seconds_since(t0);
    std::cout << "  gate b: train accuracy " << r.train_accuracy << " in " << elapsed << " s\n";
    EXPECT_GE(r.train_accuracy, 0.95);
    EXPECT_LT(elapsed, 900.0);
    g_deco = deco.to_checkpoint();
}

TEST(AcceptanceLearning, GateC_TransferToDisjointTestbed) {
    ASSERT_TRUE(g_backbone && g_deco) << "needs gates a and b";
    SynthConfig s;
    s.classes = synth_testbed_classes();
    s.seed = 11;
    const DatasetManifest m =
        make_instance_split(gen_synth_depth_dataset(s, scratch("gate_c")), 5, 0.1, SplitMode::instance);
    for (const std::string& c : m.classes())
        ASSERT_EQ(std::count(s.classes.begin(), s.classes.end(), c), 1);
    DecoModel deco = DecoModel::from_checkpoint(*g_deco);
    deco.set_frozen(true);
    BackboneModel b = BackboneModel::from_checkpoint(*g_backbone);
    b.freeze_trunk();
    TrainConfig cfg = TrainConfig::defaults(Phase::phase2);
    cfg.seed = 5;
    const TransferResult r = transfer_phase2(Mapping{MappingKind::deco, &deco, {}}, b, m, cfg);
    const std::size_t n = r.report.samples;
    const auto k = std::size_t(std::llround(r.report.accuracy * double(n)));
    const double chance = 1.0 / double(r.report.classes.size());
    const boost::math::binomial_distribution<double> null(double(n), chance);
    const double p = k == 0 ? 1.0 : boost::math::cdf(boost::math::complement(null, double(k - 1)));
    std::cout << "  gate c: " << k << "/" << n << " correct (chance " << chance << "), one-sided p = " << p << "\n";
    EXPECT_GT(r.report.accuracy, chance);
    EXPECT_LT(p, 0.01);
}

TEST(AcceptanceDeterminism, CommandChainRerunsAreByteIdentical) {
    const std::vector<Command> chain = {Command::gen_data, Command::pretrain, Command::train_deco,
                                        Command::colorize, Command::transfer, Command::finetune,
                                        Command::evaluate, Command::fuse,     Command::ablate,
                                        Command::report};
    const fs::path a = scratch("determinism_a"), b = scratch("determinism_b");
    run_chain(a, chain);
    run_chain(b, chain);
    const auto ta = tree(a), tb = tree(b);
    ASSERT_EQ(ta.size(), tb.size());
    std::size_t checkpoints = 0;
    for (const auto& [name, bytes] : ta) {
        ASSERT_TRUE(tb.count(name)) << name;
        EXPECT_TRUE(bytes == tb.at(name)) << name;
        checkpoints += fs::path(name).extension() == ".ckpt";
    }
    EXPECT_GE(checkpoints, 5u);
}

TEST(AcceptanceHarness, TransferCommandRecordsOneBackboneHash) {
    const fs::path root = scratch("harness");
    run_chain(root, {Command::gen_data, Command::pretrain, Command::train_deco, Command::transfer});
    const std::string expected = sha256_file(root / "runs" / "pretrain" / "backbone.ckpt");
    std::set<std::string> trunks;
    for (MappingKind kind : depth_mappings()) {
        const EvalReport r = read_eval_report(root / "runs" / "transfer" / to_string(kind) / "eval_report.json");
        EXPECT_EQ(r.mapping, to_string(kind));
        EXPECT_EQ(r.backbone_checkpoint, expected) << to_string(kind);
        trunks.insert(r.trunk_checksum);
    }
    EXPECT_EQ(trunks.size(), 1u);
}
