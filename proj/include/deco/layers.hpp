#pragma once

#include <random>
#include <string>
#include <vector>

#include "deco/checkpoint.hpp"
#include "deco/ops.hpp"
#include "deco/optim.hpp"

// Parameterised building blocks shared by the colorizer and the backbone.
// Weights are He-normal, biases zero, batch-norm gamma 1 / beta 0.
namespace deco::nn {

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride, std::size_t padding, bool with_bias, std::mt19937_64& rng, DType dtype);

    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Parameter*>& out);

    Parameter weight;
    Parameter bias;  // tensor undefined when the layer has no bias
    std::size_t stride = 1, padding = 0;
};

class TransposedConv2d {
public:
    TransposedConv2d() = default;
    TransposedConv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, std::size_t stride, std::size_t padding, DType dtype);

    // Per-channel bilinear upsampling kernel; cross-channel taps zero.
    void init_bilinear();
    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Parameter*>& out);

    Parameter weight;
    std::size_t stride = 1, padding = 0;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, std::size_t channels, DType dtype, double epsilon = 1e-5,
                double momentum = 0.1);

    Tensor forward(const Tensor& x, Mode mode);
    void collect(std::vector<Parameter*>& out);
    void collect_buffers(std::vector<NamedTensor>& out) const;

    Parameter gamma, beta;
    Tensor running_mean, running_var;
    std::string name;
    double epsilon = 1e-5, momentum = 0.1;
};

class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng,
           DType dtype);

    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Parameter*>& out);

    Parameter weight, bias;
};

// Parameters and buffers in one ordered list (for checkpoints and checksums).
std::vector<NamedTensor> state_entries(const std::vector<Parameter*>& params,
                                       const std::vector<NamedTensor>& buffers);

std::size_t parameter_count(const std::vector<Parameter*>& params);

}  // namespace deco::nn
