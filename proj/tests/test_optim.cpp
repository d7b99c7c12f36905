#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "deco/checkpoint.hpp"
#include "deco/ops.hpp"
#include "deco/optim.hpp"

using namespace deco;

namespace {

Parameter scalar_param(const std::string& name, double value, double grad) {
    Parameter p{name, Tensor::full({1}, value, DType::f64, true)};
    auto loss = sum(scale(p.tensor, grad));
    loss.backward();
    return p;
}

}  // namespace

TEST(Optimizer, NesterovSingleStep) {
    Parameter p = scalar_param("w", 1.0, 1.0);
    OptimizerState state(SolverKind::nesterov, 0.1, 0.9);
    std::vector<Parameter*> params{&p};
    optimizer_step(state, params);
    EXPECT_NEAR(state.first_moments().at("w").as<double>()[0], -0.1, 1e-15);
    EXPECT_NEAR(p.tensor.item(), 1.0 - 0.19, 1e-15);
}

TEST(Optimizer, SgdMomentumTwoSteps) {
    Parameter p = scalar_param("w", 0.0, 2.0);
    OptimizerState state(SolverKind::sgd_momentum, 0.5, 0.5);
    std::vector<Parameter*> params{&p};
    optimizer_step(state, params);  // v = -1, theta = -1
    optimizer_step(state, params);  // v = -0.5 - 1 = -1.5, theta = -2.5
    EXPECT_DOUBLE_EQ(p.tensor.item(), -2.5);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    Parameter p = scalar_param("w", 0.3, 1.0);
    auto state = OptimizerState::adam(0.01);
    std::vector<Parameter*> params{&p};
    optimizer_step(state, params);
    EXPECT_NEAR(p.tensor.item(), 0.3 - 0.01, 1e-9);
    EXPECT_DOUBLE_EQ(state.beta1(), 0.9);
    EXPECT_DOUBLE_EQ(state.beta2(), 0.999);
    EXPECT_DOUBLE_EQ(state.epsilon(), 1e-8);
}

TEST(Optimizer, FrozenParameterIsBitwiseUnchanged) {
    for (auto kind : {SolverKind::sgd_momentum, SolverKind::nesterov, SolverKind::adam}) {
        Parameter p = scalar_param("frozen", 0.123456789, 5.0);
        p.frozen = true;
        Parameter q = scalar_param("live", 1.0, 1.0);
        OptimizerState state = kind == SolverKind::adam ? OptimizerState::adam(0.1) : OptimizerState(kind, 0.1);
        std::vector<Parameter*> params{&p, &q};
        const double before = p.tensor.item();
        for (int i = 0; i < 25; ++i) optimizer_step(state, params);
        const double after = p.tensor.item();
        EXPECT_EQ(std::memcmp(&before, &after, sizeof(double)), 0);
        EXPECT_NE(q.tensor.item(), 1.0);
        EXPECT_EQ(state.first_moments().count("frozen"), 0u);
    }
}

TEST(Optimizer, MissingGradientIsRejected) {
    Parameter p{"orphan", Tensor::zeros({2}, DType::f64, true)};
    OptimizerState state(SolverKind::sgd_momentum, 0.1);
    std::vector<Parameter*> params{&p};
    EXPECT_THROW(optimizer_step(state, params), std::logic_error);
    p.frozen = true;
    EXPECT_NO_THROW(optimizer_step(state, params));
}

TEST(Optimizer, MomentBuffersMatchParameterShapes) {
    Parameter p{"m", Tensor::zeros({3, 2}, DType::f64, true)};
    sum(p.tensor).backward();
    auto state = OptimizerState::adam(0.1);
    std::vector<Parameter*> params{&p};
    optimizer_step(state, params);
    EXPECT_EQ(state.first_moments().at("m").size(), 6u);
    EXPECT_EQ(state.second_moments().at("m").size(), 6u);
}

TEST(Optimizer, Float32Parameters) {
    Parameter p{"f", Tensor::full({2}, 1.0, DType::f32, true)};
    sum(p.tensor).backward();
    OptimizerState state(SolverKind::nesterov, 0.1, 0.9);
    std::vector<Parameter*> params{&p};
    optimizer_step(state, params);
    EXPECT_NEAR(p.tensor.at(0), 0.81, 1e-6);
}

TEST(LrSchedule, PhaseOneDefaultSchedule) {
    LrSchedule s{0.007, 50, 0.45, 0.1};
    EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.007);
    EXPECT_DOUBLE_EQ(lr_at(s, 21), 0.007);
    EXPECT_EQ(s.first_stepped_epoch(), 22);
    EXPECT_DOUBLE_EQ(lr_at(s, 22), 0.007 * 0.1);
    EXPECT_NEAR(lr_at(s, 30), 0.0007, 1e-18);
}

TEST(LrSchedule, FinetuneSchedule) {
    LrSchedule s{0.001, 90, 0.45, 0.1};
    EXPECT_EQ(s.first_stepped_epoch(), 40);
    EXPECT_DOUBLE_EQ(lr_at(s, 39), 0.001);
    EXPECT_DOUBLE_EQ(lr_at(s, 40), 0.001 * 0.1);
}

TEST(LrSchedule, EpochOutOfRange) {
    LrSchedule s{0.007, 50, 0.45, 0.1};
    EXPECT_THROW(lr_at(s, 50), std::out_of_range);
    EXPECT_THROW(lr_at(s, -1), std::out_of_range);
}

TEST(Checkpoint, RoundTripIsLossless) {
    std::mt19937_64 rng(4);
    Checkpoint ck;
    ck.metadata = R"({"kind":"test"})";
    ck.entries.push_back({"a.weight", Tensor::randn({3, 2, 2}, rng)});
    ck.entries.push_back({"a.bias", Tensor::from_vector({2}, {1e-300, -0.0})});
    auto bytes = encode_checkpoint(ck);
    ASSERT_GE(bytes.size(), 8u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DCKP");
    EXPECT_EQ(bytes[4], 1);  // version, little-endian
    auto back = decode_checkpoint(bytes);
    EXPECT_EQ(back.metadata, ck.metadata);
    ASSERT_EQ(back.entries.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back.entries[i].name, ck.entries[i].name);
        EXPECT_EQ(back.entries[i].tensor.shape(), ck.entries[i].tensor.shape());
        auto a = back.entries[i].tensor.to_vector(), b = ck.entries[i].tensor.to_vector();
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    }
    EXPECT_EQ(state_checksum(back.entries), state_checksum(ck.entries));
}

TEST(Checkpoint, CorruptInputIsRejected) {
    std::vector<std::uint8_t> junk = {'N', 'O', 'P', 'E', 1, 0, 0, 0};
    EXPECT_THROW(decode_checkpoint(junk), DataError);
    Checkpoint ck;
    ck.entries.push_back({"x", Tensor::zeros({4})});
    auto bytes = encode_checkpoint(ck);
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

TEST(Checkpoint, AssignStateChecksShapes) {
    Checkpoint ck;
    ck.entries.push_back({"w", Tensor::from_vector({2}, {1.0, 2.0})});
    auto dst = Tensor::zeros({2}, DType::f32);
    assign_state({{"w", dst}}, ck);
    EXPECT_EQ(dst.to_vector(), (std::vector<double>{1.0, 2.0}));
    EXPECT_THROW(assign_state({{"w", Tensor::zeros({3})}}, ck), DataError);
    EXPECT_THROW(assign_state({{"missing", Tensor::zeros({2})}}, ck), DataError);
}
