#include "deco/handcrafted.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "deco/error.hpp"
#include "deco/json_fields.hpp"

namespace deco {

ColorImage grayscale_map(const GrayImage& gray) {
    ColorImage out(gray.width, gray.height);
    for (std::size_t i = 0; i < gray.data.size(); ++i)
        out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = gray.data[i];
    return out;
}

std::array<std::uint8_t, 3> colorjet(std::uint8_t v) {
    // 255 * (1.5 - 4|v/255 - c|) = 382.5 - |4v - 1020c|, with 1020c integral; evaluated in halves.
    auto lobe = [v](int k) {
        const int twice = std::clamp(765 - 2 * std::abs(4 * int(v) - k), 0, 510);
        return std::uint8_t((twice + 1) / 2);
    };
    return {lobe(765), lobe(510), lobe(255)};
}

ColorImage colorjet_map(const GrayImage& gray) {
    std::array<std::array<std::uint8_t, 3>, 256> lut;
    for (int v = 0; v < 256; ++v) lut[std::size_t(v)] = colorjet(std::uint8_t(v));
    ColorImage out(gray.width, gray.height);
    for (std::size_t i = 0; i < gray.data.size(); ++i) std::copy_n(lut[gray.data[i]].data(), 3, &out.data[3 * i]);
    return out;
}

NormalField compute_normals(const RealImage& depth, double unit_scale) {
    if (!(unit_scale > 0)) throw std::invalid_argument("unit_scale must be positive");
    const std::size_t w = depth.width, h = depth.height;
    NormalField out(w, h);
    auto derivative = [](double before, double here, double after, bool has_before, bool has_after) {
        if (has_before && has_after) return 0.5 * (after - before);
        if (has_after) return after - here;
        if (has_before) return here - before;
        return 0.0;
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double c = depth.at(x, y);
            const double gx = derivative(x > 0 ? depth.at(x - 1, y) : c, c, x + 1 < w ? depth.at(x + 1, y) : c, x > 0,
                                         x + 1 < w);
            const double gy = derivative(y > 0 ? depth.at(x, y - 1) : c, c, y + 1 < h ? depth.at(x, y + 1) : c, y > 0,
                                         y + 1 < h);
            const double norm = std::sqrt(gx * gx + gy * gy + unit_scale * unit_scale);
            out.at(x, y, 0) = -gx / norm;
            out.at(x, y, 1) = -gy / norm;
            out.at(x, y, 2) = unit_scale / norm;
        }
    return out;
}

NormalField compute_normals(const DepthMap& depth, double unit_scale) {
    return compute_normals(to_real(depth), unit_scale);
}

ColorImage normals_to_color(const NormalField& normals) {
    ColorImage out(normals.width, normals.height);
    for (std::size_t i = 0; i < normals.data.size(); ++i) out.data[i] = to_u8(255.0 * (normals.data[i] + 1.0) / 2.0);
    return out;
}

DepthMap recursive_median_fill(const DepthMap& depth, int k) {
    if (k < 3 || k % 2 == 0) throw std::invalid_argument("median fill window must be odd and >= 3");
    if (std::none_of(depth.data.begin(), depth.data.end(), [](auto v) { return v != 0; }))
        throw DataError("recursive_median_fill: depth map has no valid pixels");
    DepthMap cur = depth;
    const long r = k / 2, w = long(depth.width), h = long(depth.height);
    std::vector<std::uint16_t> window;
    window.reserve(std::size_t(k * k));
    while (true) {
        const DepthMap snapshot = cur;
        std::size_t remaining = 0, filled = 0;
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                if (snapshot.at(std::size_t(x), std::size_t(y)) != 0) continue;
                window.clear();
                for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r); ++yy)
                    for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx) {
                        const auto v = snapshot.at(std::size_t(xx), std::size_t(yy));
                        if (v != 0) window.push_back(v);
                    }
                if (window.empty()) {
                    ++remaining;
                    continue;
                }
                const std::size_t mid = (window.size() - 1) / 2;
                std::nth_element(window.begin(), window.begin() + long(mid), window.end());
                cur.at(std::size_t(x), std::size_t(y)) = window[mid];
                ++filled;
            }
        if (remaining == 0) break;
        if (filled == 0) throw std::logic_error("recursive_median_fill made no progress");
    }
    return cur;
}

RealImage bilateral_filter(const RealImage& img, double sigma_space, double sigma_range, int k) {
    if (!(sigma_space > 0) || !(sigma_range > 0)) throw std::invalid_argument("bilateral sigmas must be positive");
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("bilateral window must be odd and >= 1");
    const long r = k / 2, w = long(img.width), h = long(img.height);
    std::vector<double> spatial(std::size_t(k * k));
    for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx)
            spatial[std::size_t((dy + r) * k + dx + r)] =
                std::exp(-double(dx * dx + dy * dy) / (2.0 * sigma_space * sigma_space));
    const bool plain = std::isinf(sigma_range);
    const double range_coeff = plain ? 0.0 : 1.0 / (2.0 * sigma_range * sigma_range);
    RealImage out(img.width, img.height);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const double center = img.at(std::size_t(x), std::size_t(y));
            double acc = 0, wsum = 0;
            for (long dy = -r; dy <= r; ++dy) {
                const long yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (long dx = -r; dx <= r; ++dx) {
                    const long xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    const double v = img.at(std::size_t(xx), std::size_t(yy));
                    const double d = v - center;
                    const double wt = spatial[std::size_t((dy + r) * k + dx + r)] * (plain ? 1.0 : std::exp(-d * d * range_coeff));
                    acc += wt * d;
                    wsum += wt;
                }
            }
            out.at(std::size_t(x), std::size_t(y)) = center + acc / wsum;
        }
    return out;
}

GrayImage bilateral_filter(const GrayImage& img, double sigma_space, double sigma_range, int k) {
    const RealImage f = bilateral_filter(to_real(img), sigma_space, sigma_range, k);
    GrayImage out(img.width, img.height);
    std::transform(f.data.begin(), f.data.end(), out.data.begin(), to_u8);
    return out;
}

RealImage gaussian_blur(const RealImage& img, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("blur sigma must be positive");
    const long r = long(std::ceil(3.0 * sigma));
    std::vector<double> kernel(std::size_t(2 * r + 1));
    double total = 0;
    for (long i = -r; i <= r; ++i) total += kernel[std::size_t(i + r)] = std::exp(-double(i * i) / (2 * sigma * sigma));
    for (auto& v : kernel) v /= total;
    const long w = long(img.width), h = long(img.height);
    RealImage tmp(img.width, img.height), out(img.width, img.height);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const double c = img.at(std::size_t(x), std::size_t(y));
            double acc = 0;
            for (long i = -r; i <= r; ++i)
                acc += kernel[std::size_t(i + r)] * (img.at(std::size_t(std::clamp(x + i, 0L, w - 1)), std::size_t(y)) - c);
            tmp.at(std::size_t(x), std::size_t(y)) = c + acc;
        }
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const double c = tmp.at(std::size_t(x), std::size_t(y));
            double acc = 0;
            for (long i = -r; i <= r; ++i)
                acc += kernel[std::size_t(i + r)] * (tmp.at(std::size_t(x), std::size_t(std::clamp(y + i, 0L, h - 1))) - c);
            out.at(std::size_t(x), std::size_t(y)) = c + acc;
        }
    return out;
}

ColorImage unsharp_mask(const ColorImage& img, double sigma, double amount) {
    if (amount < 0) throw std::invalid_argument("unsharp amount must be >= 0");
    ColorImage out(img.width, img.height);
    for (int c = 0; c < 3; ++c) {
        RealImage plane(img.width, img.height);
        for (std::size_t i = 0; i < img.pixels(); ++i) plane.data[i] = img.data[3 * i + std::size_t(c)];
        const RealImage blurred = gaussian_blur(plane, sigma);
        for (std::size_t i = 0; i < img.pixels(); ++i)
            out.data[3 * i + std::size_t(c)] = to_u8(plane.data[i] + amount * (plane.data[i] - blurred.data[i]));
    }
    return out;
}

void SurfaceNormalsParams::validate() const {
    if (fill_window < 3 || fill_window % 2 == 0) throw ConfigError("fill_window must be odd and >= 3");
    if (bilateral_window < 1 || bilateral_window % 2 == 0) throw ConfigError("bilateral_window must be odd");
    if (!(sigma_space > 0) || !(sigma_range > 0)) throw ConfigError("bilateral sigmas must be positive");
    if (!(unit_scale > 0)) throw ConfigError("unit_scale must be positive");
    if (!(unsharp_sigma > 0) || unsharp_amount < 0) throw ConfigError("invalid unsharp parameters");
}

void to_json(nlohmann::json& j, const SurfaceNormalsParams& p) {
    j = nlohmann::json{{"fill_window", p.fill_window},     {"bilateral_window", p.bilateral_window},
                       {"sigma_space", p.sigma_space},     {"sigma_range", p.sigma_range},
                       {"unit_scale", p.unit_scale},       {"unsharp_sigma", p.unsharp_sigma},
                       {"unsharp_amount", p.unsharp_amount}};
}

void from_json(const nlohmann::json& j, SurfaceNormalsParams& p) {
    using namespace json_fields;
    const std::string what = "surface_normals";
    require_object(j,
                   {"fill_window", "bilateral_window", "sigma_space", "sigma_range", "unit_scale", "unsharp_sigma",
                    "unsharp_amount"},
                   what);
    read(j, "fill_window", p.fill_window, what);
    read(j, "bilateral_window", p.bilateral_window, what);
    read(j, "sigma_space", p.sigma_space, what);
    read(j, "sigma_range", p.sigma_range, what);
    read(j, "unit_scale", p.unit_scale, what);
    read(j, "unsharp_sigma", p.unsharp_sigma, what);
    read(j, "unsharp_amount", p.unsharp_amount, what);
    p.validate();
}

ColorImage surface_normals_map(const DepthMap& depth, double unit_scale) {
    return normals_to_color(compute_normals(depth, unit_scale));
}

NormalField smoothed_normals(const DepthMap& depth, const SurfaceNormalsParams& params) {
    params.validate();
    const DepthMap filled = recursive_median_fill(depth, params.fill_window);
    const RealImage smooth =
        bilateral_filter(to_real(filled), params.sigma_space, params.sigma_range, params.bilateral_window);
    return compute_normals(smooth, params.unit_scale);
}

ColorImage surface_normals_pp(const DepthMap& depth, const SurfaceNormalsParams& params) {
    const ColorImage colored = normals_to_color(smoothed_normals(depth, params));
    return unsharp_mask(colored, params.unsharp_sigma, params.unsharp_amount);
}

}  // namespace deco
