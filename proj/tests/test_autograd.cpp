#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "deco/ops.hpp"
#include "test_support.hpp"

using namespace deco;
using deco::testing::finite_difference_check;
using deco::testing::random_vector;

namespace {

constexpr double kTolerance = 1e-4;
constexpr int kSeeds = 10;

// Checks every requires-grad leaf of `build` with a random projection loss sum(w * f(...)).
void check_op(const std::string& label, const std::function<Tensor(std::vector<Tensor>&)>& build,
              const std::vector<Shape>& leaf_shapes, std::uint64_t seed, double tolerance = kTolerance) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> leaves;
    for (const auto& s : leaf_shapes) leaves.push_back(Tensor::from_vector(s, random_vector(numel(s), rng), DType::f64, true));
    Tensor probe_out = [&] {
        NoGradGuard g;
        return build(leaves);
    }();
    auto proj = Tensor::from_vector(probe_out.shape(), random_vector(probe_out.numel(), rng));

    auto loss_value = [&]() {
        NoGradGuard g;
        return sum(mul(build(leaves), proj)).item();
    };
    sum(mul(build(leaves), proj)).backward();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        auto res = finite_difference_check(loss_value, leaves[i], leaves[i].grad_vector());
        EXPECT_LT(res.max_relative_error, tolerance) << label << " leaf " << i << " seed " << seed;
    }
}

}  // namespace

TEST(Backward, SumGivesOnes) {
    auto x = Tensor::from_vector({2, 3}, {1, -2, 3, 4, 5, -6}, DType::f64, true);
    sum(x).backward();
    EXPECT_EQ(x.grad_vector(), std::vector<double>(6, 1.0));
}

TEST(Backward, SquareGivesTwiceX) {
    auto x = Tensor::from_vector({3}, {1.5, -2.0, 0.25}, DType::f64, true);
    sum(mul(x, x)).backward();
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{3.0, -4.0, 0.5}));
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = Tensor::from_vector({2}, {1.0, 2.0}, DType::f64, true);
    auto loss = sum(mul(x, x));
    loss.backward();
    loss.backward();
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{4.0, 8.0}));
    x.zero_grad();
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, NonScalarLossIsRejected) {
    auto x = Tensor::zeros({2}, DType::f64, true);
    EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Backward, IntermediateTensorsReceiveGrads) {
    auto x = Tensor::from_vector({2}, {1.0, -1.0}, DType::f64, true);
    auto h = scale(x, 3.0);
    auto loss = sum(leaky_relu(h, 0.5));
    loss.backward();
    ASSERT_TRUE(h.has_grad());
    EXPECT_EQ(h.grad_vector(), (std::vector<double>{1.0, 0.5}));
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{3.0, 1.5}));
}

TEST(Backward, NoGradGuardSkipsGraph) {
    auto x = Tensor::zeros({2}, DType::f64, true);
    NoGradGuard guard;
    auto y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(y.grad_fn(), nullptr);
}

TEST(Backward, SharedInputSumsContributions) {
    auto x = Tensor::from_vector({2}, {2.0, 3.0}, DType::f64, true);
    auto loss = sum(add(scale(x, 2.0), mul(x, x)));
    loss.backward();
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{6.0, 8.0}));
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, Conv2d) {
    check_op("conv2d", [](auto& l) { return conv2d(l[0], l[1], l[2], 1, 1); }, {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
             GetParam());
    check_op("conv2d s2", [](auto& l) { return conv2d(l[0], l[1], l[2], 2, 3); }, {{1, 2, 9, 9}, {3, 2, 7, 7}, {3}},
             100 + GetParam());
}

TEST_P(GradientCheck, TransposedConv2d) {
    check_op("tconv", [](auto& l) { return transposed_conv2d(l[0], l[1], l[2], 4, 2); },
             {{2, 3, 3, 3}, {3, 2, 8, 8}, {2}}, GetParam());
}

TEST_P(GradientCheck, MaxPool) {
    check_op("maxpool", [](auto& l) { return maxpool2d(l[0], 3, 2, 1); }, {{2, 2, 7, 7}}, GetParam());
}

TEST_P(GradientCheck, BatchNormTrain) {
    check_op("bn-train",
             [](auto& l) {
                 auto rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
                 return batch_norm2d(l[0], l[1], l[2], rm, rv, Mode::train);
             },
             {{3, 3, 4, 4}, {3}, {3}}, GetParam());
}

TEST_P(GradientCheck, BatchNormEval) {
    check_op("bn-eval",
             [](auto& l) {
                 auto rm = Tensor::from_vector({2}, {0.3, -0.2}), rv = Tensor::from_vector({2}, {0.5, 2.0});
                 return batch_norm2d(l[0], l[1], l[2], rm, rv, Mode::eval);
             },
             {{2, 2, 3, 3}, {2}, {2}}, GetParam());
}

TEST_P(GradientCheck, LeakyRelu) {
    // Relative error at 64-bit away from the kink is tighter than the generic tolerance.
    check_op("leaky", [](auto& l) { return leaky_relu(l[0], 0.2); }, {{4, 5}}, GetParam(), 1e-6);
}

TEST_P(GradientCheck, Sigmoid) {
    check_op("sigmoid", [](auto& l) { return sigmoid(scale(l[0], 4.0)); }, {{3, 4}}, GetParam());
}

TEST_P(GradientCheck, Linear) {
    check_op("linear", [](auto& l) { return linear(l[0], l[1], l[2]); }, {{3, 5}, {4, 5}, {4}}, GetParam(), 1e-6);
}

TEST_P(GradientCheck, SoftmaxCrossEntropy) {
    std::mt19937_64 rng(GetParam());
    auto logits = Tensor::from_vector({4, 5}, random_vector(20, rng, -3, 3), DType::f64, true);
    std::vector<int> labels = {0, 4, 2, 2};
    auto loss = softmax_cross_entropy(logits, labels);
    loss.backward();

    // closed form: (softmax - onehot) / B
    auto probs = softmax_rows(logits);
    auto grad = logits.grad_vector();
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t k = 0; k < 5; ++k)
            EXPECT_NEAR(grad[b * 5 + k], (probs[b][k] - (int(k) == labels[b] ? 1.0 : 0.0)) / 4.0, 1e-14);

    auto res = finite_difference_check(
        [&] {
            NoGradGuard g;
            return softmax_cross_entropy(logits, labels).item();
        },
        logits, grad);
    EXPECT_LT(res.max_relative_error, kTolerance);
}

TEST_P(GradientCheck, ChannelAffineAndReshape) {
    const std::vector<double> shift = {0.1, -0.4};
    check_op("affine+reshape",
             [&](auto& l) { return reshape(channel_affine(l[0], 1.0 / 255.0, shift), {2, 2 * 3 * 3}); },
             {{2, 2, 3, 3}}, GetParam());
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck, ::testing::Range(1, 1 + kSeeds));
