#include "deco/depth.hpp"

#include <limits>

#include "deco/error.hpp"

namespace deco {

DepthRange depth_range(const DepthMap& depth) {
    DepthRange r;
    r.min_valid = std::numeric_limits<std::uint16_t>::max();
    for (auto v : depth.data) {
        if (v == 0) continue;
        ++r.valid;
        r.min_valid = std::min(r.min_valid, v);
        r.max_valid = std::max(r.max_valid, v);
    }
    if (r.valid == 0) r.min_valid = 0;
    return r;
}

GrayImage normalize_depth(const DepthMap& depth) {
    const DepthRange r = depth_range(depth);
    if (r.valid == 0) throw DataError("normalize_depth: depth map has no valid pixels");
    GrayImage out(depth.width, depth.height);
    const std::uint64_t range = r.max_valid - r.min_valid;
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const std::uint16_t v = depth.data[i];
        if (v == 0) continue;
        if (range == 0) {
            out.data[i] = 128;
            continue;
        }
        // floor(255 * (v - min) / range + 1/2), in exact integer arithmetic
        const std::uint64_t num = 2 * 255 * std::uint64_t(v - r.min_valid) + range;
        out.data[i] = std::uint8_t(num / (2 * range));
    }
    return out;
}

}  // namespace deco
