#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deco/tensor.hpp"

// Differentiable tensor operations. Spatial ops take [C,H,W] or [B,C,H,W] input;
// an unbatched input yields an unbatched output.
namespace deco {

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);
std::size_t transposed_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                                     std::size_t padding);

// weight: [C_out, C_in, k, k]; bias: [C_out] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
    return conv2d(input, weight, Tensor{}, stride, padding);
}

// Adjoint of conv2d w.r.t. its input. weight: [C_in, C_out, k, k] (the conv2d weight layout
// read with input/output channels swapped); bias: [C_out] or undefined.
Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                         std::size_t padding);
inline Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                                std::size_t padding) {
    return transposed_conv2d(input, weight, Tensor{}, stride, padding);
}

// Gradient goes to the first row-major argmax of each window.
Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding);

enum class Mode { train, eval };

// Running statistics are updated in place in train mode:
// running = (1 - momentum) * running + momentum * batch (unbiased variance).
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, Mode mode, double epsilon = 1e-5, double momentum = 0.1);

Tensor leaky_relu(const Tensor& input, double slope);
Tensor sigmoid(const Tensor& input);

// input: [B, D], weight: [K, D], bias: [K] or undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, double factor);
Tensor sum(const Tensor& input);
Tensor reshape(const Tensor& input, Shape shape);

// y[b,c,...] = x[b,c,...] * factor + shift[c]; differentiable w.r.t. x only.
Tensor channel_affine(const Tensor& input, double factor, std::span<const double> shift);

// Row-wise softmax of a [B, K] tensor. Not recorded.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

// Concatenates [C,H,W] or [1,...] tensors along a new leading batch axis. Not recorded.
Tensor stack(std::span<const Tensor> items);

}  // namespace deco
