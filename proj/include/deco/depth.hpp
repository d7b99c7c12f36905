#pragma once

#include <cstdint>

#include "deco/image.hpp"

namespace deco {

// Valid pixels: round-half-up of 255 * (v - min) / (max - min), missing -> 0,
// constant valid depth -> 128. Throws DataError if every pixel is missing.
GrayImage normalize_depth(const DepthMap& depth);

struct DepthRange {
    std::uint16_t min_valid = 0, max_valid = 0;
    std::size_t valid = 0;
};

DepthRange depth_range(const DepthMap& depth);

}  // namespace deco
