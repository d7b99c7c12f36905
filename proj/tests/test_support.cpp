#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace deco::testing {

std::vector<double> naive_conv2d(const std::vector<double>& x, std::size_t batch, std::size_t channels,
                                 std::size_t height, std::size_t width, const std::vector<double>& w,
                                 std::size_t out_channels, std::size_t kernel, const std::vector<double>& bias,
                                 std::size_t stride, std::size_t padding, std::size_t& out_h, std::size_t& out_w) {
    out_h = (height + 2 * padding - kernel) / stride + 1;
    out_w = (width + 2 * padding - kernel) / stride + 1;
    std::vector<double> y(batch * out_channels * out_h * out_w, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_channels; ++o)
            for (std::size_t oy = 0; oy < out_h; ++oy)
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t ky = 0; ky < kernel; ++ky)
                            for (std::size_t kx = 0; kx < kernel; ++kx) {
                                const long iy = long(oy * stride + ky) - long(padding);
                                const long ix = long(ox * stride + kx) - long(padding);
                                if (iy < 0 || ix < 0 || iy >= long(height) || ix >= long(width)) continue;
                                acc += x[((b * channels + c) * height + iy) * width + ix] *
                                       w[((o * channels + c) * kernel + ky) * kernel + kx];
                            }
                    y[((b * out_channels + o) * out_h + oy) * out_w + ox] = acc;
                }
    return y;
}

std::vector<double> naive_transposed_conv2d(const std::vector<double>& x, std::size_t batch, std::size_t channels,
                                            std::size_t height, std::size_t width, const std::vector<double>& w,
                                            std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                            std::size_t padding, std::size_t& out_h, std::size_t& out_w) {
    out_h = (height - 1) * stride + kernel - 2 * padding;
    out_w = (width - 1) * stride + kernel - 2 * padding;
    std::vector<double> y(batch * out_channels * out_h * out_w, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t iy = 0; iy < height; ++iy)
                for (std::size_t ix = 0; ix < width; ++ix) {
                    const double v = x[((b * channels + c) * height + iy) * width + ix];
                    for (std::size_t o = 0; o < out_channels; ++o)
                        for (std::size_t ky = 0; ky < kernel; ++ky)
                            for (std::size_t kx = 0; kx < kernel; ++kx) {
                                const long oy = long(iy * stride + ky) - long(padding);
                                const long ox = long(ix * stride + kx) - long(padding);
                                if (oy < 0 || ox < 0 || oy >= long(out_h) || ox >= long(out_w)) continue;
                                y[((b * out_channels + o) * out_h + oy) * out_w + ox] +=
                                    v * w[((c * out_channels + o) * kernel + ky) * kernel + kx];
                            }
                }
    return y;
}

std::vector<double> naive_maxpool(const std::vector<double>& x, std::size_t planes, std::size_t height,
                                  std::size_t width, std::size_t kernel, std::size_t stride, std::size_t padding,
                                  std::size_t& out_h, std::size_t& out_w) {
    out_h = (height + 2 * padding - kernel) / stride + 1;
    out_w = (width + 2 * padding - kernel) / stride + 1;
    std::vector<double> y;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                std::vector<double> window;
                for (std::size_t ky = 0; ky < kernel; ++ky)
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const long iy = long(oy * stride + ky) - long(padding);
                        const long ix = long(ox * stride + kx) - long(padding);
                        if (iy < 0 || ix < 0 || iy >= long(height) || ix >= long(width)) continue;
                        window.push_back(x[(p * height + iy) * width + ix]);
                    }
                y.push_back(*std::max_element(window.begin(), window.end()));
            }
    return y;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult finite_difference_check(const std::function<double()>& loss, Tensor target,
                                        const std::vector<double>& analytic, std::vector<std::size_t> indices,
                                        double step) {
    if (indices.empty()) {
        indices.resize(target.numel());
        std::iota(indices.begin(), indices.end(), 0);
    }
    GradCheckResult result;
    for (std::size_t i : indices) {
        const double original = target.at(i);
        target.set(i, original + step);
        const double plus = loss();
        target.set(i, original - step);
        const double minus = loss();
        target.set(i, original);
        const double numeric = (plus - minus) / (2.0 * step);
        result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[i], numeric));
        ++result.checked;
    }
    return result;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(n, count));
    return all;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace deco::testing

namespace deco::testing {

double leaky_margin(const Tensor& pre_activation) {
    double m = std::numeric_limits<double>::infinity();
    for (double v : pre_activation.to_vector()) m = std::min(m, std::abs(v));
    return m;
}

namespace {

// Enumerates pooling windows as flat indices into input.to_vector().
template <typename F>
void for_each_window(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding, F&& f) {
    const bool batched = input.ndim() == 4;
    const std::size_t planes = batched ? input.dim(0) * input.dim(1) : input.dim(0);
    const std::size_t h = input.dim(input.ndim() - 2), w = input.dim(input.ndim() - 1);
    const std::size_t oh = (h + 2 * padding - kernel) / stride + 1, ow = (w + 2 * padding - kernel) / stride + 1;
    std::vector<std::size_t> window;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                window.clear();
                for (std::size_t ky = 0; ky < kernel; ++ky)
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const long y = long(oy * stride + ky) - long(padding);
                        const long x = long(ox * stride + kx) - long(padding);
                        if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) continue;
                        window.push_back((p * h + std::size_t(y)) * w + std::size_t(x));
                    }
                f(window);
            }
}

// Calls leaky(pre) for every leaky pre-activation and pool(input, k, s, p) for every max-pool input.
struct KinkWalker {
    std::function<void(const Tensor&)> leaky;
    std::function<void(const Tensor&, std::size_t, std::size_t, std::size_t)> pool;

    Tensor deco(DecoModel& m, const Tensor& x) const {
        NoGradGuard g;
        const double slope = m.config().leaky_slope;
        const Tensor pre = m.stem_bn.forward(m.stem_conv.forward(x), Mode::train);
        leaky(pre);
        pool(leaky_relu(pre, slope), 3, 2, 1);
        Tensor y = maxpool2d(leaky_relu(pre, slope), 3, 2, 1);
        for (ResidualBlock& b : m.blocks) {
            const Tensor a = b.bn1.forward(b.conv1.forward(y), Mode::train);
            const Tensor z = add(b.bn2.forward(b.conv2.forward(leaky_relu(a, slope)), Mode::train), y);
            leaky(a);
            leaky(z);
            y = leaky_relu(z, slope);
        }
        return m.forward(x, Mode::train);
    }

    void backbone(BackboneModel& m, const Tensor& images, Mode mode) const {
        NoGradGuard g;
        const double slope = m.config().leaky_slope;
        const Mode bn_mode = m.trunk_frozen() ? Mode::eval : mode;
        Tensor x = m.preprocess(images);
        for (BackboneStage& st : m.stages) {
            const Tensor pre = st.bn.forward(st.conv.forward(x), bn_mode);
            leaky(pre);
            pool(leaky_relu(pre, slope), 2, 2, 0);
            x = maxpool2d(leaky_relu(pre, slope), 2, 2, 0);
        }
        leaky(m.fc.forward(reshape(x, {x.dim(0), x.numel() / x.dim(0)})));
    }
};

struct MarginWalker : KinkWalker {
    double margin = std::numeric_limits<double>::infinity();
    MarginWalker() {
        leaky = [this](const Tensor& t) { margin = std::min(margin, leaky_margin(t)); };
        pool = [this](const Tensor& t, std::size_t k, std::size_t s, std::size_t p) {
            margin = std::min(margin, maxpool_margin(t, k, s, p));
        };
    }
};

struct PatternWalker : KinkWalker {
    std::vector<int> pattern;
    PatternWalker() {
        leaky = [this](const Tensor& t) {
            for (double v : t.to_vector()) pattern.push_back(v > 0);
        };
        pool = [this](const Tensor& t, std::size_t k, std::size_t s, std::size_t p) {
            const std::vector<double> v = t.to_vector();
            for_each_window(t, k, s, p, [&](const std::vector<std::size_t>& w) {
                std::size_t best = 0;
                for (std::size_t i = 1; i < w.size(); ++i)
                    if (v[w[i]] > v[w[best]]) best = i;
                pattern.push_back(int(best));
            });
        };
    }
};

}  // namespace

double maxpool_margin(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::vector<double> v = input.to_vector();
    double m = std::numeric_limits<double>::infinity();
    std::vector<double> window;
    for_each_window(input, kernel, stride, padding, [&](const std::vector<std::size_t>& w) {
        if (w.size() < 2) return;
        window.clear();
        for (std::size_t i : w) window.push_back(v[i]);
        std::partial_sort(window.begin(), window.begin() + 2, window.end(), std::greater<>());
        m = std::min(m, window[0] - window[1]);
    });
    return m;
}

double deco_kink_margin(DecoModel& m, const Tensor& x) {
    MarginWalker w;
    w.deco(m, x);
    return w.margin;
}

double backbone_kink_margin(BackboneModel& m, const Tensor& images, Mode mode) {
    MarginWalker w;
    w.backbone(m, images, mode);
    return w.margin;
}

std::vector<int> activation_pattern(DecoModel* deco, BackboneModel* backbone, const Tensor& input, Mode mode) {
    PatternWalker w;
    Tensor x = input;
    if (deco) x = w.deco(*deco, x);
    if (backbone) w.backbone(*backbone, x, mode);
    return w.pattern;
}

}  // namespace deco::testing
