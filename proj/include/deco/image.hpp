#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace deco {

// Interleaved row-major raster: data[(y * width + x) * C + c].
template <typename T, int C>
struct Image {
    static constexpr int channels = C;
    using value_type = T;

    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<T> data;

    Image() = default;
    Image(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h * C, fill) {}

    bool empty() const { return data.empty(); }
    std::size_t pixels() const { return width * height; }

    T& at(std::size_t x, std::size_t y, int c = 0) { return data[(y * width + x) * C + c]; }
    const T& at(std::size_t x, std::size_t y, int c = 0) const { return data[(y * width + x) * C + c]; }

    bool operator==(const Image&) const = default;
};

// Depth in millimeters, 0 == missing.
using DepthMap = Image<std::uint16_t, 1>;
using GrayImage = Image<std::uint8_t, 1>;
// R, G, B.
using ColorImage = Image<std::uint8_t, 3>;
// Nonzero == object.
using Mask = Image<std::uint8_t, 1>;
using RealImage = Image<double, 1>;

// Round-half-up then clamp to [0, 255].
inline std::uint8_t to_u8(double v) {
    const double r = std::floor(v + 0.5);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

template <typename T>
T round_to(double v) {
    if constexpr (std::is_floating_point_v<T>) {
        return static_cast<T>(v);
    } else {
        const double r = std::floor(v + 0.5);
        return static_cast<T>(std::clamp(r, double(std::numeric_limits<T>::min()), double(std::numeric_limits<T>::max())));
    }
}

template <typename T, int C>
Image<double, C> to_real(const Image<T, C>& img) {
    Image<double, C> out(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), [](T v) { return double(v); });
    return out;
}

struct CropBox {
    std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
    bool operator==(const CropBox&) const = default;
};

// Tight bounding box of the nonzero mask pixels, grown on each side by
// round(margin * extent) along that axis and clipped to the image. With
// pad_to_square the shorter side is grown symmetrically (still clipped).
CropBox mask_crop_box(const Mask& mask, double margin = 0.05, bool pad_to_square = false);

template <typename T, int C>
Image<T, C> crop(const Image<T, C>& img, const CropBox& box) {
    if (box.x0 + box.width > img.width || box.y0 + box.height > img.height || box.width == 0 || box.height == 0)
        throw std::out_of_range("crop box outside image");
    Image<T, C> out(box.width, box.height);
    for (std::size_t y = 0; y < box.height; ++y)
        std::copy_n(&img.at(box.x0, box.y0 + y), box.width * C, &out.at(0, y));
    return out;
}

template <typename T, int C>
Image<T, C> crop_with_mask(const Image<T, C>& img, const Mask& mask, double margin = 0.05,
                           bool pad_to_square = false) {
    if (mask.width != img.width || mask.height != img.height)
        throw std::invalid_argument("mask extent " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                    " differs from image " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height));
    return crop(img, mask_crop_box(mask, margin, pad_to_square));
}

// Bilinear resampling with half-pixel-centered coordinates and edge clamping.
// Integer outputs are rounded half-up.
template <typename T, int C>
Image<T, C> resize_bilinear(const Image<T, C>& img, std::size_t target_w, std::size_t target_h) {
    if (target_w == 0 || target_h == 0) throw std::invalid_argument("resize target must be positive");
    if (img.empty()) throw std::invalid_argument("resize of empty image");
    if (target_w == img.width && target_h == img.height) return img;
    Image<T, C> out(target_w, target_h);
    const double sx = double(img.width) / double(target_w);
    const double sy = double(img.height) / double(target_h);
    for (std::size_t y = 0; y < target_h; ++y) {
        const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
        const std::size_t y0 = std::size_t(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - double(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
            const std::size_t x0 = std::size_t(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - double(x0);
            for (int c = 0; c < C; ++c) {
                const double top = (1 - wx) * double(img.at(x0, y0, c)) + wx * double(img.at(x1, y0, c));
                const double bottom = (1 - wx) * double(img.at(x0, y1, c)) + wx * double(img.at(x1, y1, c));
                out.at(x, y, c) = round_to<T>((1 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

// Bilinear resampling that ignores missing (zero) depth: each output is the
// weight-renormalized blend of its valid neighbours, or 0 if none are valid.
DepthMap resize_depth(const DepthMap& depth, std::size_t target_w, std::size_t target_h);

// Nearest-neighbour resampling for masks.
Mask resize_nearest(const Mask& mask, std::size_t target_w, std::size_t target_h);

// Places img centered on a square canvas of side max(w, h), filling with `fill`.
template <typename T, int C>
Image<T, C> pad_to_square(const Image<T, C>& img, T fill = T{}) {
    const std::size_t side = std::max(img.width, img.height);
    Image<T, C> out(side, side, fill);
    const std::size_t ox = (side - img.width) / 2, oy = (side - img.height) / 2;
    for (std::size_t y = 0; y < img.height; ++y) std::copy_n(&img.at(0, y), img.width * C, &out.at(ox, oy + y));
    return out;
}

// Lossless PNG I/O. Loaders validate bit depth and channel layout and throw
// DataError (MissingArtifactError for absent files) naming the expected format.
DepthMap load_depth(const std::filesystem::path& path);
void save_depth(const std::filesystem::path& path, const DepthMap& depth);
GrayImage load_gray(const std::filesystem::path& path);
void save_gray(const std::filesystem::path& path, const GrayImage& img);
ColorImage load_color(const std::filesystem::path& path);
void save_color(const std::filesystem::path& path, const ColorImage& img);
// Accepts 8-bit grayscale (any nonzero value is foreground) or 1-bit PNGs.
Mask load_mask(const std::filesystem::path& path);

// Horizontal concatenation with a separator column of `gap` pixels.
ColorImage hconcat(const std::vector<ColorImage>& tiles, std::size_t gap = 2, std::uint8_t fill = 255);

}  // namespace deco
