#include "deco/layers.hpp"

#include <cmath>

namespace deco::nn {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng, DType dtype) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)), dtype, true);
}

}  // namespace

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride_, std::size_t padding_, bool with_bias, std::mt19937_64& rng, DType dtype)
    : stride(stride_), padding(padding_) {
    weight = {name + ".weight",
              he_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng, dtype)};
    bias.name = name + ".bias";
    if (with_bias) bias.tensor = Tensor::zeros({out_channels}, dtype, true);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight.tensor, bias.tensor, stride, padding); }

void Conv2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (bias.tensor.defined()) out.push_back(&bias);
}

TransposedConv2d::TransposedConv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                                   std::size_t kernel, std::size_t stride_, std::size_t padding_, DType dtype)
    : stride(stride_), padding(padding_) {
    weight = {name + ".weight", Tensor::zeros({in_channels, out_channels, kernel, kernel}, dtype, true)};
    init_bilinear();
}

void TransposedConv2d::init_bilinear() {
    Tensor& w = weight.tensor;
    const std::size_t in_c = w.dim(0), out_c = w.dim(1), k = w.dim(2);
    const double factor = static_cast<double>((k + 1) / 2);
    const double center = k % 2 == 1 ? factor - 1.0 : factor - 0.5;
    for (std::size_t i = 0; i < in_c; ++i)
        for (std::size_t o = 0; o < out_c; ++o)
            for (std::size_t y = 0; y < k; ++y)
                for (std::size_t x = 0; x < k; ++x) {
                    const double v = i == o ? (1.0 - std::abs(static_cast<double>(y) - center) / factor) *
                                                  (1.0 - std::abs(static_cast<double>(x) - center) / factor)
                                            : 0.0;
                    w.set(((i * out_c + o) * k + y) * k + x, v);
                }
}

Tensor TransposedConv2d::forward(const Tensor& x) const {
    return transposed_conv2d(x, weight.tensor, stride, padding);
}

void TransposedConv2d::collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

BatchNorm2d::BatchNorm2d(const std::string& name_, std::size_t channels, DType dtype, double epsilon_,
                         double momentum_)
    : name(name_), epsilon(epsilon_), momentum(momentum_) {
    gamma = {name + ".gamma", Tensor::full({channels}, 1.0, dtype, true)};
    beta = {name + ".beta", Tensor::zeros({channels}, dtype, true)};
    running_mean = Tensor::zeros({channels}, DType::f64);
    running_var = Tensor::full({channels}, 1.0, DType::f64);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    return batch_norm2d(x, gamma.tensor, beta.tensor, running_mean, running_var, mode, epsilon, momentum);
}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(std::vector<NamedTensor>& out) const {
    out.push_back({name + ".running_mean", running_mean});
    out.push_back({name + ".running_var", running_var});
}

Linear::Linear(const std::string& name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng,
               DType dtype) {
    weight = {name + ".weight", he_normal({out_features, in_features}, in_features, rng, dtype)};
    bias = {name + ".bias", Tensor::zeros({out_features}, dtype, true)};
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight.tensor, bias.tensor); }

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

std::vector<NamedTensor> state_entries(const std::vector<Parameter*>& params,
                                       const std::vector<NamedTensor>& buffers) {
    std::vector<NamedTensor> out;
    for (const Parameter* p : params) out.push_back({p->name, p->tensor});
    out.insert(out.end(), buffers.begin(), buffers.end());
    return out;
}

std::size_t parameter_count(const std::vector<Parameter*>& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->tensor.numel();
    return n;
}

}  // namespace deco::nn
