#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "deco/image.hpp"

namespace deco {

// Unit normals, x -> right, y -> down, z toward the sensor (nz > 0).
using NormalField = Image<double, 3>;

ColorImage grayscale_map(const GrayImage& gray);

// t = v / 255; R = 255 clamp(1.5 - 4|t - 0.75|), G at 0.5, B at 0.25; round-half-up.
std::array<std::uint8_t, 3> colorjet(std::uint8_t v);
ColorImage colorjet_map(const GrayImage& gray);

// n ~ (-dd/dx, -dd/dy, unit_scale), central differences inside, one-sided on the border.
// unit_scale is the depth-unit size of one pixel.
NormalField compute_normals(const RealImage& depth, double unit_scale = 1.0);
NormalField compute_normals(const DepthMap& depth, double unit_scale = 1.0);

// round-half-up(255 (c + 1) / 2) per component.
ColorImage normals_to_color(const NormalField& normals);

// Repeated passes; each pass sets every missing pixel that has valid pixels in its
// k x k window to their lower median (computed on the pre-pass snapshot).
DepthMap recursive_median_fill(const DepthMap& depth, int k = 5);

// k x k window clipped at the border. sigma_range may be +infinity (plain Gaussian).
RealImage bilateral_filter(const RealImage& img, double sigma_space, double sigma_range, int k);
GrayImage bilateral_filter(const GrayImage& img, double sigma_space, double sigma_range, int k);

// Separable Gaussian, radius ceil(3 sigma), replicated border.
RealImage gaussian_blur(const RealImage& img, double sigma);

// clamp(img + amount (img - blur(img)), 0, 255) per channel.
ColorImage unsharp_mask(const ColorImage& img, double sigma, double amount);

struct SurfaceNormalsParams {
    int fill_window = 5;
    int bilateral_window = 7;
    double sigma_space = 3.0;
    double sigma_range = 25.0;  // depth units (mm)
    double unit_scale = 1.0;
    double unsharp_sigma = 1.5;
    double unsharp_amount = 0.5;

    void validate() const;
};

void to_json(nlohmann::json& j, const SurfaceNormalsParams& p);
void from_json(const nlohmann::json& j, SurfaceNormalsParams& p);

// compute_normals + normals_to_color on the raw map, missing pixels read as depth 0.
ColorImage surface_normals_map(const DepthMap& depth, double unit_scale = 1.0);

// recursive_median_fill -> bilateral_filter -> compute_normals, the geometric half of surface_normals_pp.
NormalField smoothed_normals(const DepthMap& depth, const SurfaceNormalsParams& params = {});

// smoothed_normals -> normals_to_color -> unsharp_mask
ColorImage surface_normals_pp(const DepthMap& depth, const SurfaceNormalsParams& params = {});

}  // namespace deco
