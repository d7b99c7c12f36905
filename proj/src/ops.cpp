#include "deco/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace deco {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct Spatial {
    std::size_t batch, channels, height, width;
    bool batched;
    std::size_t plane() const { return height * width; }
    std::size_t sample() const { return channels * height * width; }
};

Spatial spatial_of(const Tensor& x, const char* op) {
    if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
    if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
    throw ShapeError(std::string(op) + ": expected [C,H,W] or [B,C,H,W] input, got " + shape_str(x.shape()));
}

Shape spatial_shape(const Spatial& s, std::size_t channels, std::size_t height, std::size_t width) {
    if (s.batched) return {s.batch, channels, height, width};
    return {channels, height, width};
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (b.defined() && a.dtype() != b.dtype())
        throw std::invalid_argument(std::string(op) + ": mixed precision operands (" + to_string(a.dtype()) +
                                    " vs " + to_string(b.dtype()) + ")");
}

// Unfolds one [C,H,W] image into a [C*k*k, out_h*out_w] matrix. Out-of-bounds taps read zero.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w, T* col) {
    const std::size_t cols = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                T* row = col + ((c * kernel + ky) * kernel + kx) * cols;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= static_cast<long>(height)) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = image + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds columns back into a [C,H,W] image.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w, T* image) {
    const std::size_t cols = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                const T* row = col + ((c * kernel + ky) * kernel + kx) * cols;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                    if (iy < 0 || iy >= static_cast<long>(height)) continue;
                    T* dst = image + (c * height + static_cast<std::size_t>(iy)) * width;
                    const T* src = row + oy * out_w;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                        if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------------------------
// conv2d

struct ConvGeometry {
    Spatial in;
    std::size_t out_channels, kernel, stride, padding, out_h, out_w;
};

class Conv2dNode final : public Node {
public:
    explicit Conv2dNode(ConvGeometry g) : g_(g) {}
    const char* name() const override { return "conv2d"; }

    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        dispatch(grad_output.dtype(), [&]<typename T>() { run<T>(grad_output, grads); });
    }

private:
    template <typename T>
    void run(const Buffer& grad_output, std::span<Buffer*> grads) {
        const auto& x = inputs[0];
        const auto& w = inputs[1];
        const std::size_t ckk = g_.in.channels * g_.kernel * g_.kernel;
        const std::size_t cols = g_.out_h * g_.out_w;
        auto gy = grad_output.as<T>();
        CMapR<T> wm(w.values<T>().data(), g_.out_channels, ckk);
        std::vector<T> col(ckk * cols);
        for (std::size_t b = 0; b < g_.in.batch; ++b) {
            CMapR<T> gyb(gy.data() + b * g_.out_channels * cols, g_.out_channels, cols);
            if (grads[0]) {
                MapR<T> colm(col.data(), ckk, cols);
                colm.noalias() = wm.transpose() * gyb;
                col2im(col.data(), g_.in.channels, g_.in.height, g_.in.width, g_.kernel, g_.stride, g_.padding,
                       g_.out_h, g_.out_w, grads[0]->as<T>().data() + b * g_.in.sample());
            }
            if (grads[1]) {
                im2col(x.values<T>().data() + b * g_.in.sample(), g_.in.channels, g_.in.height, g_.in.width,
                       g_.kernel, g_.stride, g_.padding, g_.out_h, g_.out_w, col.data());
                MapR<T> gw(grads[1]->as<T>().data(), g_.out_channels, ckk);
                gw.noalias() += gyb * CMapR<T>(col.data(), ckk, cols).transpose();
            }
            if (grads.size() > 2 && grads[2]) {
                auto gb = grads[2]->as<T>();
                // sequential sums: Eigen's vectorised reduction order depends on buffer alignment
                const T* row = gy.data() + b * g_.out_channels * cols;
                for (std::size_t c = 0; c < g_.out_channels; ++c, row += cols)
                    gb[c] += std::accumulate(row, row + cols, T(0));
            }
        }
    }

    ConvGeometry g_;
};

// ---------------------------------------------------------------------------------------------
// transposed conv2d

class TransposedConv2dNode final : public Node {
public:
    explicit TransposedConv2dNode(ConvGeometry g) : g_(g) {}
    const char* name() const override { return "transposed_conv2d"; }

    // Here g_.in describes the transposed-conv input (the conv "output" grid) and
    // out_h/out_w its enlarged output.
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        dispatch(grad_output.dtype(), [&]<typename T>() { run<T>(grad_output, grads); });
    }

private:
    template <typename T>
    void run(const Buffer& grad_output, std::span<Buffer*> grads) {
        const auto& x = inputs[0];
        const auto& w = inputs[1];
        const std::size_t in_c = g_.in.channels;
        const std::size_t okk = g_.out_channels * g_.kernel * g_.kernel;
        const std::size_t cols = g_.in.plane();
        const std::size_t out_sample = g_.out_channels * g_.out_h * g_.out_w;
        auto gy = grad_output.as<T>();
        CMapR<T> wm(w.values<T>().data(), in_c, okk);
        std::vector<T> col(okk * cols);
        for (std::size_t b = 0; b < g_.in.batch; ++b) {
            im2col(gy.data() + b * out_sample, g_.out_channels, g_.out_h, g_.out_w, g_.kernel, g_.stride,
                   g_.padding, g_.in.height, g_.in.width, col.data());
            CMapR<T> colm(col.data(), okk, cols);
            if (grads[0]) {
                MapR<T> gx(grads[0]->as<T>().data() + b * g_.in.sample(), in_c, cols);
                gx.noalias() += wm * colm;
            }
            if (grads[1]) {
                CMapR<T> xb(x.values<T>().data() + b * g_.in.sample(), in_c, cols);
                MapR<T> gw(grads[1]->as<T>().data(), in_c, okk);
                gw.noalias() += xb * colm.transpose();
            }
            if (grads.size() > 2 && grads[2]) {
                auto gb = grads[2]->as<T>();
                const T* src = gy.data() + b * out_sample;
                const std::size_t plane = g_.out_h * g_.out_w;
                for (std::size_t c = 0; c < g_.out_channels; ++c)
                    for (std::size_t i = 0; i < plane; ++i) gb[c] += src[c * plane + i];
            }
        }
    }

    ConvGeometry g_;
};

// ---------------------------------------------------------------------------------------------
// maxpool

class MaxPoolNode final : public Node {
public:
    MaxPoolNode(std::vector<std::ptrdiff_t> argmax, std::size_t input_size)
        : argmax_(std::move(argmax)), input_size_(input_size) {}
    const char* name() const override { return "maxpool2d"; }

    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto gy = grad_output.as<T>();
            auto gx = grads[0]->as<T>();
            for (std::size_t i = 0; i < argmax_.size(); ++i)
                if (argmax_[i] >= 0) gx[static_cast<std::size_t>(argmax_[i])] += gy[i];
        });
    }

private:
    std::vector<std::ptrdiff_t> argmax_;  // flat input index per output element
    std::size_t input_size_;
};

// ---------------------------------------------------------------------------------------------
// batch norm

class BatchNormNode final : public Node {
public:
    BatchNormNode(Spatial s, Mode mode, std::vector<double> mean, std::vector<double> inv_std)
        : s_(s), mode_(mode), mean_(std::move(mean)), inv_std_(std::move(inv_std)) {}
    const char* name() const override { return "batch_norm2d"; }

    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        dispatch(grad_output.dtype(), [&]<typename T>() { run<T>(grad_output, grads); });
    }

private:
    template <typename T>
    void run(const Buffer& grad_output, std::span<Buffer*> grads) {
        auto x = inputs[0].values<T>();
        auto gamma = inputs[1].values<T>();
        auto gy = grad_output.as<T>();
        const std::size_t plane = s_.plane();
        const double n = static_cast<double>(s_.batch * plane);
        for (std::size_t c = 0; c < s_.channels; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < s_.batch; ++b) {
                const std::size_t base = (b * s_.channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (x[base + i] - mean_[c]) * inv_std_[c];
                    sum_dy += gy[base + i];
                    sum_dy_xhat += gy[base + i] * xhat;
                }
            }
            if (grads[1]) grads[1]->as<T>()[c] += static_cast<T>(sum_dy_xhat);
            if (grads[2]) grads[2]->as<T>()[c] += static_cast<T>(sum_dy);
            if (!grads[0]) continue;
            auto gx = grads[0]->as<T>();
            const double scale = gamma[c] * inv_std_[c];
            for (std::size_t b = 0; b < s_.batch; ++b) {
                const std::size_t base = (b * s_.channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    if (mode_ == Mode::eval) {
                        gx[base + i] += static_cast<T>(scale * gy[base + i]);
                    } else {
                        const double xhat = (x[base + i] - mean_[c]) * inv_std_[c];
                        gx[base + i] += static_cast<T>(scale / n * (n * gy[base + i] - sum_dy - xhat * sum_dy_xhat));
                    }
                }
            }
        }
    }

    Spatial s_;
    Mode mode_;
    std::vector<double> mean_, inv_std_;
};

// ---------------------------------------------------------------------------------------------
// elementwise

class LeakyReluNode final : public Node {
public:
    explicit LeakyReluNode(double slope) : slope_(slope) {}
    const char* name() const override { return "leaky_relu"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto x = inputs[0].values<T>();
            auto gy = grad_output.as<T>();
            auto gx = grads[0]->as<T>();
            const T slope = static_cast<T>(slope_);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += x[i] >= T(0) ? gy[i] : slope * gy[i];
        });
    }

private:
    double slope_;
};

class SigmoidNode final : public Node {
public:
    explicit SigmoidNode(Buffer output) : output_(std::move(output)) {}
    const char* name() const override { return "sigmoid"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto y = output_.as<T>();
            auto gy = grad_output.as<T>();
            auto gx = grads[0]->as<T>();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
        });
    }

private:
    Buffer output_;
};

class AddNode final : public Node {
public:
    const char* name() const override { return "add"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        for (auto* g : grads)
            if (g) g->add(grad_output);
    }
};

class MulNode final : public Node {
public:
    const char* name() const override { return "mul"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto a = inputs[0].values<T>();
            auto b = inputs[1].values<T>();
            auto gy = grad_output.as<T>();
            if (grads[0]) {
                auto ga = grads[0]->as<T>();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * b[i];
            }
            if (grads[1]) {
                auto gb = grads[1]->as<T>();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * a[i];
            }
        });
    }
};

class ScaleNode final : public Node {
public:
    explicit ScaleNode(double factor) : factor_(factor) {}
    const char* name() const override { return "scale"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto gy = grad_output.as<T>();
            auto gx = grads[0]->as<T>();
            const T f = static_cast<T>(factor_);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gy[i];
        });
    }

private:
    double factor_;
};

class SumNode final : public Node {
public:
    const char* name() const override { return "sum"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            const T g = grad_output.as<T>()[0];
            for (auto& v : grads[0]->as<T>()) v += g;
        });
    }
};

class ReshapeNode final : public Node {
public:
    const char* name() const override { return "reshape"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (grads[0]) grads[0]->add(grad_output);
    }
};

class LinearNode final : public Node {
public:
    LinearNode(std::size_t batch, std::size_t in_dim, std::size_t out_dim)
        : batch_(batch), in_(in_dim), out_(out_dim) {}
    const char* name() const override { return "linear"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        dispatch(grad_output.dtype(), [&]<typename T>() {
            CMapR<T> gy(grad_output.as<T>().data(), batch_, out_);
            if (grads[0]) {
                MapR<T> gx(grads[0]->as<T>().data(), batch_, in_);
                gx.noalias() += gy * CMapR<T>(inputs[1].values<T>().data(), out_, in_);
            }
            if (grads[1]) {
                MapR<T> gw(grads[1]->as<T>().data(), out_, in_);
                gw.noalias() += gy.transpose() * CMapR<T>(inputs[0].values<T>().data(), batch_, in_);
            }
            if (grads.size() > 2 && grads[2]) {
                auto gb = grads[2]->as<T>();
                for (std::size_t r = 0; r < batch_; ++r)
                    for (std::size_t k = 0; k < out_; ++k) gb[k] += gy(long(r), long(k));
            }
        });
    }

private:
    std::size_t batch_, in_, out_;
};

class SoftmaxCrossEntropyNode final : public Node {
public:
    SoftmaxCrossEntropyNode(std::vector<double> probs, std::vector<int> labels, std::size_t classes)
        : probs_(std::move(probs)), labels_(std::move(labels)), classes_(classes) {}
    const char* name() const override { return "softmax_cross_entropy"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            const double g = grad_output.as<T>()[0] / static_cast<double>(labels_.size());
            auto gx = grads[0]->as<T>();
            for (std::size_t b = 0; b < labels_.size(); ++b)
                for (std::size_t k = 0; k < classes_; ++k) {
                    const double onehot = static_cast<int>(k) == labels_[b] ? 1.0 : 0.0;
                    gx[b * classes_ + k] += static_cast<T>(g * (probs_[b * classes_ + k] - onehot));
                }
        });
    }

private:
    std::vector<double> probs_;
    std::vector<int> labels_;
    std::size_t classes_;
};

class ChannelAffineNode final : public Node {
public:
    explicit ChannelAffineNode(double factor) : factor_(factor) {}
    const char* name() const override { return "channel_affine"; }
    void backward(const Buffer& grad_output, std::span<Buffer*> grads) override {
        if (!grads[0]) return;
        dispatch(grad_output.dtype(), [&]<typename T>() {
            auto gy = grad_output.as<T>();
            auto gx = grads[0]->as<T>();
            const T f = static_cast<T>(factor_);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gy[i];
        });
    }

private:
    double factor_;
};

template <typename NodeT>
std::shared_ptr<NodeT> with_inputs(std::shared_ptr<NodeT> node, std::vector<Tensor> inputs) {
    node->inputs = std::move(inputs);
    return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    require_same_dtype(a, b, op);
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ShapeError("stride must be >= 1");
    if (input + 2 * padding < kernel)
        throw ShapeError("padded extent " + std::to_string(input + 2 * padding) + " smaller than kernel " +
                         std::to_string(kernel));
    return (input + 2 * padding - kernel) / stride + 1;
}

std::size_t transposed_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                                     std::size_t padding) {
    if (stride == 0) throw ShapeError("stride must be >= 1");
    const long extent = static_cast<long>((input - 1) * stride + kernel) - 2 * static_cast<long>(padding);
    if (extent <= 0) throw ShapeError("transposed_conv2d: non-positive output extent " + std::to_string(extent));
    return static_cast<std::size_t>(extent);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    const Spatial s = spatial_of(input, "conv2d");
    if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
        throw ShapeError("conv2d: weight must be [C_out,C_in,k,k], got " + shape_str(weight.shape()));
    if (weight.dim(1) != s.channels)
        throw ShapeError("conv2d: input has " + std::to_string(s.channels) + " channels but weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
    require_same_dtype(input, weight, "conv2d");
    require_same_dtype(input, bias, "conv2d");
    const std::size_t out_c = weight.dim(0), k = weight.dim(2);
    if (bias.defined() && bias.shape() != Shape{out_c})
        throw ShapeError("conv2d: bias must be [" + std::to_string(out_c) + "], got " + shape_str(bias.shape()));
    ConvGeometry g{s,
                   out_c,
                   k,
                   stride,
                   padding,
                   conv_output_extent(s.height, k, stride, padding),
                   conv_output_extent(s.width, k, stride, padding)};

    const Shape out_shape = spatial_shape(s, out_c, g.out_h, g.out_w);
    Buffer out(input.dtype(), numel(out_shape));
    dispatch(input.dtype(), [&]<typename T>() {
        const std::size_t ckk = s.channels * k * k;
        const std::size_t cols = g.out_h * g.out_w;
        std::vector<T> col(ckk * cols);
        CMapR<T> wm(weight.values<T>().data(), out_c, ckk);
        auto y = out.as<T>();
        for (std::size_t b = 0; b < s.batch; ++b) {
            im2col(input.values<T>().data() + b * s.sample(), s.channels, s.height, s.width, k, stride, padding,
                   g.out_h, g.out_w, col.data());
            MapR<T> yb(y.data() + b * out_c * cols, out_c, cols);
            yb.noalias() = wm * CMapR<T>(col.data(), ckk, cols);
            if (bias.defined()) {
                auto bv = bias.values<T>();
                for (std::size_t c = 0; c < out_c; ++c) yb.row(c).array() += bv[c];
            }
        }
    });
    return make_result(out_shape, std::move(out),
                       with_inputs(std::make_shared<Conv2dNode>(g), {input, weight, bias}));
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                         std::size_t padding) {
    const Spatial s = spatial_of(input, "transposed_conv2d");
    if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
        throw ShapeError("transposed_conv2d: weight must be [C_in,C_out,k,k], got " + shape_str(weight.shape()));
    if (weight.dim(0) != s.channels)
        throw ShapeError("transposed_conv2d: input has " + std::to_string(s.channels) + " channels but weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(0)));
    require_same_dtype(input, weight, "transposed_conv2d");
    require_same_dtype(input, bias, "transposed_conv2d");
    const std::size_t out_c = weight.dim(1), k = weight.dim(2);
    if (bias.defined() && bias.shape() != Shape{out_c})
        throw ShapeError("transposed_conv2d: bias must be [" + std::to_string(out_c) + "]");
    ConvGeometry g{s,
                   out_c,
                   k,
                   stride,
                   padding,
                   transposed_output_extent(s.height, k, stride, padding),
                   transposed_output_extent(s.width, k, stride, padding)};

    const Shape out_shape = spatial_shape(s, out_c, g.out_h, g.out_w);
    Buffer out(input.dtype(), numel(out_shape));
    dispatch(input.dtype(), [&]<typename T>() {
        const std::size_t okk = out_c * k * k;
        const std::size_t cols = s.plane();
        const std::size_t out_sample = out_c * g.out_h * g.out_w;
        std::vector<T> col(okk * cols);
        CMapR<T> wm(weight.values<T>().data(), s.channels, okk);
        auto y = out.as<T>();
        for (std::size_t b = 0; b < s.batch; ++b) {
            MapR<T> colm(col.data(), okk, cols);
            colm.noalias() = wm.transpose() * CMapR<T>(input.values<T>().data() + b * s.sample(), s.channels, cols);
            col2im(col.data(), out_c, g.out_h, g.out_w, k, stride, padding, s.height, s.width,
                   y.data() + b * out_sample);
            if (bias.defined()) {
                auto bv = bias.values<T>();
                const std::size_t plane = g.out_h * g.out_w;
                for (std::size_t c = 0; c < out_c; ++c)
                    for (std::size_t i = 0; i < plane; ++i) y[b * out_sample + c * plane + i] += bv[c];
            }
        }
    });
    return make_result(out_shape, std::move(out),
                       with_inputs(std::make_shared<TransposedConv2dNode>(g), {input, weight, bias}));
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const Spatial s = spatial_of(input, "maxpool2d");
    if (kernel == 0) throw ShapeError("maxpool2d: kernel must be >= 1");
    if (2 * padding > kernel) throw ShapeError("maxpool2d: padding must be at most half the kernel");
    const std::size_t oh = conv_output_extent(s.height, kernel, stride, padding);
    const std::size_t ow = conv_output_extent(s.width, kernel, stride, padding);
    const Shape out_shape = spatial_shape(s, s.channels, oh, ow);
    Buffer out(input.dtype(), numel(out_shape));
    std::vector<std::ptrdiff_t> argmax(out.size(), -1);
    dispatch(input.dtype(), [&]<typename T>() {
        auto x = input.values<T>();
        auto y = out.as<T>();
        std::size_t o = 0;
        for (std::size_t plane = 0; plane < s.batch * s.channels; ++plane) {
            const std::size_t base = plane * s.plane();
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::ptrdiff_t best_idx = -1;
                    for (std::size_t ky = 0; ky < kernel; ++ky) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                        if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
                        for (std::size_t kx = 0; kx < kernel; ++kx) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                            if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
                            const std::size_t idx = base + static_cast<std::size_t>(iy) * s.width +
                                                    static_cast<std::size_t>(ix);
                            if (best_idx < 0 || x[idx] > best) {
                                best = x[idx];
                                best_idx = static_cast<std::ptrdiff_t>(idx);
                            }
                        }
                    }
                    y[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    });
    return make_result(out_shape, std::move(out),
                       with_inputs(std::make_shared<MaxPoolNode>(std::move(argmax), input.numel()), {input}));
}

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, Mode mode, double epsilon, double momentum) {
    const Spatial s = spatial_of(input, "batch_norm2d");
    for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
        if (t->shape() != Shape{s.channels})
            throw ShapeError("batch_norm2d: per-channel tensors must be [" + std::to_string(s.channels) +
                             "], got " + shape_str(t->shape()));
    require_same_dtype(input, gamma, "batch_norm2d");
    require_same_dtype(input, beta, "batch_norm2d");

    const std::size_t plane = s.plane();
    const std::size_t count = s.batch * plane;
    std::vector<double> mean(s.channels), inv_std(s.channels);
    Buffer out(input.dtype(), input.numel());
    dispatch(input.dtype(), [&]<typename T>() {
        auto x = input.values<T>();
        auto g = gamma.values<T>();
        auto bt = beta.values<T>();
        auto y = out.as<T>();
        for (std::size_t c = 0; c < s.channels; ++c) {
            double var = 0.0;
            if (mode == Mode::train) {
                double acc = 0.0;
                for (std::size_t b = 0; b < s.batch; ++b)
                    for (std::size_t i = 0; i < plane; ++i) acc += x[(b * s.channels + c) * plane + i];
                mean[c] = acc / static_cast<double>(count);
                double sq = 0.0;
                for (std::size_t b = 0; b < s.batch; ++b)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = x[(b * s.channels + c) * plane + i] - mean[c];
                        sq += d * d;
                    }
                var = sq / static_cast<double>(count);
                const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
                running_mean.set(c, (1.0 - momentum) * running_mean.at(c) + momentum * mean[c]);
                running_var.set(c, (1.0 - momentum) * running_var.at(c) + momentum * unbiased);
            } else {
                mean[c] = running_mean.at(c);
                var = running_var.at(c);
            }
            inv_std[c] = 1.0 / std::sqrt(var + epsilon);
            for (std::size_t b = 0; b < s.batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t idx = (b * s.channels + c) * plane + i;
                    y[idx] = static_cast<T>(g[c] * (x[idx] - mean[c]) * inv_std[c] + bt[c]);
                }
        }
    });
    return make_result(input.shape(), std::move(out),
                       with_inputs(std::make_shared<BatchNormNode>(s, mode, std::move(mean), std::move(inv_std)),
                                   {input, gamma, beta}));
}

Tensor leaky_relu(const Tensor& input, double slope) {
    Buffer out(input.dtype(), input.numel());
    dispatch(input.dtype(), [&]<typename T>() {
        auto x = input.values<T>();
        auto y = out.as<T>();
        const T a = static_cast<T>(slope);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= T(0) ? x[i] : a * x[i];
    });
    return make_result(input.shape(), std::move(out), with_inputs(std::make_shared<LeakyReluNode>(slope), {input}));
}

Tensor sigmoid(const Tensor& input) {
    Buffer out(input.dtype(), input.numel());
    dispatch(input.dtype(), [&]<typename T>() {
        auto x = input.values<T>();
        auto y = out.as<T>();
        for (std::size_t i = 0; i < x.size(); ++i) {
            // Split by sign so exp never overflows.
            if (x[i] >= T(0)) {
                y[i] = T(1) / (T(1) + std::exp(-x[i]));
            } else {
                const T e = std::exp(x[i]);
                y[i] = e / (T(1) + e);
            }
        }
    });
    Buffer saved = out;
    return make_result(input.shape(), std::move(out),
                       with_inputs(std::make_shared<SigmoidNode>(std::move(saved)), {input}));
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 2 || weight.ndim() != 2)
        throw ShapeError("linear: expected [B,D] input and [K,D] weight, got " + shape_str(input.shape()) + " and " +
                         shape_str(weight.shape()));
    if (input.dim(1) != weight.dim(1))
        throw ShapeError("linear: inner dimensions disagree, input " + shape_str(input.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    const std::size_t batch = input.dim(0), in = input.dim(1), out_dim = weight.dim(0);
    if (bias.defined() && bias.shape() != Shape{out_dim})
        throw ShapeError("linear: bias must be [" + std::to_string(out_dim) + "], got " + shape_str(bias.shape()));
    require_same_dtype(input, weight, "linear");
    require_same_dtype(input, bias, "linear");
    Buffer out(input.dtype(), batch * out_dim);
    dispatch(input.dtype(), [&]<typename T>() {
        MapR<T> y(out.as<T>().data(), batch, out_dim);
        y.noalias() = CMapR<T>(input.values<T>().data(), batch, in) *
                      CMapR<T>(weight.values<T>().data(), out_dim, in).transpose();
        if (bias.defined()) {
            auto bv = bias.values<T>();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t k = 0; k < out_dim; ++k) y(b, k) += bv[k];
        }
    });
    return make_result({batch, out_dim}, std::move(out),
                       with_inputs(std::make_shared<LinearNode>(batch, in, out_dim), {input, weight, bias}));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be [B,K], got " + shape_str(logits.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    for (int label : labels)
        if (label < 0 || static_cast<std::size_t>(label) >= classes)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                                    std::to_string(classes) + ")");
    const auto z = logits.to_vector();
    std::vector<double> probs(z.size());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = z.data() + b * classes;
        const double mx = *std::max_element(row, row + classes);
        double denom = 0.0;
        for (std::size_t k = 0; k < classes; ++k) denom += std::exp(row[k] - mx);
        const double log_denom = std::log(denom);
        for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] = std::exp(row[k] - mx - log_denom);
        loss -= row[labels[b]] - mx - log_denom;
    }
    loss /= static_cast<double>(batch);
    Buffer out(logits.dtype(), 1);
    dispatch(logits.dtype(), [&]<typename T>() { out.as<T>()[0] = static_cast<T>(loss); });
    return make_result({1}, std::move(out),
                       with_inputs(std::make_shared<SoftmaxCrossEntropyNode>(
                                       std::move(probs), std::vector<int>(labels.begin(), labels.end()), classes),
                                   {logits}));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Buffer out = a.buffer();
    out.add(b.buffer());
    return make_result(a.shape(), std::move(out), with_inputs(std::make_shared<AddNode>(), {a, b}));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Buffer out = a.buffer();
    dispatch(a.dtype(), [&]<typename T>() {
        auto y = out.as<T>();
        auto bv = b.values<T>();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    });
    return make_result(a.shape(), std::move(out), with_inputs(std::make_shared<MulNode>(), {a, b}));
}

Tensor scale(const Tensor& input, double factor) {
    Buffer out = input.buffer();
    dispatch(input.dtype(), [&]<typename T>() {
        for (auto& v : out.as<T>()) v *= static_cast<T>(factor);
    });
    return make_result(input.shape(), std::move(out), with_inputs(std::make_shared<ScaleNode>(factor), {input}));
}

Tensor sum(const Tensor& input) {
    Buffer out(input.dtype(), 1);
    dispatch(input.dtype(), [&]<typename T>() {
        T acc = T(0);
        for (T v : input.values<T>()) acc += v;
        out.as<T>()[0] = acc;
    });
    return make_result({1}, std::move(out), with_inputs(std::make_shared<SumNode>(), {input}));
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (numel(shape) != input.numel())
        throw ShapeError("reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
    return make_result(std::move(shape), input.buffer(), with_inputs(std::make_shared<ReshapeNode>(), {input}));
}

Tensor channel_affine(const Tensor& input, double factor, std::span<const double> shift) {
    const Spatial s = spatial_of(input, "channel_affine");
    if (shift.size() != s.channels)
        throw ShapeError("channel_affine: " + std::to_string(shift.size()) + " shifts for " +
                         std::to_string(s.channels) + " channels");
    Buffer out(input.dtype(), input.numel());
    dispatch(input.dtype(), [&]<typename T>() {
        auto x = input.values<T>();
        auto y = out.as<T>();
        const std::size_t plane = s.plane();
        for (std::size_t b = 0; b < s.batch; ++b)
            for (std::size_t c = 0; c < s.channels; ++c)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t idx = (b * s.channels + c) * plane + i;
                    y[idx] = static_cast<T>(x[idx] * factor + shift[c]);
                }
    });
    return make_result(input.shape(), std::move(out),
                       with_inputs(std::make_shared<ChannelAffineNode>(factor), {input}));
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("softmax_rows: expected [B,K]");
    const auto z = logits.to_vector();
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    std::vector<std::vector<double>> out(batch, std::vector<double>(classes));
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = z.data() + b * classes;
        const double mx = *std::max_element(row, row + classes);
        double denom = 0.0;
        for (std::size_t k = 0; k < classes; ++k) denom += std::exp(row[k] - mx);
        for (std::size_t k = 0; k < classes; ++k) out[b][k] = std::exp(row[k] - mx) / denom;
    }
    return out;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    Shape item_shape = items.front().shape();
    if (!item_shape.empty() && item_shape.front() == 1 && item_shape.size() == 4) item_shape.erase(item_shape.begin());
    Shape out_shape = item_shape;
    out_shape.insert(out_shape.begin(), items.size());
    const std::size_t per = numel(item_shape);
    Buffer out(items.front().dtype(), numel(out_shape));
    dispatch(out.dtype(), [&]<typename T>() {
        auto y = out.as<T>();
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i].numel() != per || items[i].dtype() != out.dtype())
                throw ShapeError("stack: item " + std::to_string(i) + " has shape " + shape_str(items[i].shape()));
            auto src = items[i].values<T>();
            std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>(i * per));
        }
    });
    return make_result(out_shape, std::move(out), nullptr);
}

}  // namespace deco
