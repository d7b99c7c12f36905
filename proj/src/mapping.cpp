#include "deco/mapping.hpp"

#include "deco/depth.hpp"

namespace deco {

std::string to_string(MappingKind kind) {
    switch (kind) {
        case MappingKind::gray: return "gray";
        case MappingKind::colorjet: return "colorjet";
        case MappingKind::surface_normals: return "surface_normals";
        case MappingKind::surface_normals_pp: return "surface_normals_pp";
        case MappingKind::deco: return "deco";
        case MappingKind::rgb: return "rgb";
    }
    return "?";
}

MappingKind parse_mapping(const std::string& name) {
    for (MappingKind k : {MappingKind::gray, MappingKind::colorjet, MappingKind::surface_normals,
                          MappingKind::surface_normals_pp, MappingKind::deco, MappingKind::rgb})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown mapping '" + name +
                      "' (expected gray, colorjet, surface_normals, surface_normals_pp, deco or rgb)");
}

const std::vector<MappingKind>& depth_mappings() {
    static const std::vector<MappingKind> kinds = {MappingKind::gray, MappingKind::colorjet,
                                                   MappingKind::surface_normals, MappingKind::surface_normals_pp,
                                                   MappingKind::deco};
    return kinds;
}

GrayImage depth_to_gray(const DepthMap& depth, int size) {
    return normalize_depth(resize_depth(depth, std::size_t(size), std::size_t(size)));
}

ColorImage handcrafted_colorization(MappingKind kind, const DepthMap& depth, int size,
                                    const SurfaceNormalsParams& normals) {
    const DepthMap resized = resize_depth(depth, std::size_t(size), std::size_t(size));
    switch (kind) {
        case MappingKind::gray: return grayscale_map(normalize_depth(resized));
        case MappingKind::colorjet: return colorjet_map(normalize_depth(resized));
        case MappingKind::surface_normals: return surface_normals_map(resized, normals.unit_scale);
        case MappingKind::surface_normals_pp: return surface_normals_pp(resized, normals);
        default: throw std::invalid_argument("not a hand-crafted mapping: " + to_string(kind));
    }
}

LabeledImages load_deco_inputs(const DatasetManifest& manifest, Split split, int size) {
    LabeledImages out;
    out.classes = manifest.classes();
    const auto index = manifest.class_index();
    for (const ManifestEntry* e : manifest.in_split(split)) {
        const GrayImage g = depth_to_gray(load_depth(manifest.resolve(e->depth_path)), size);
        out.images.push_back(gray_to_input(g, size));
        out.labels.push_back(index.at(e->class_label));
    }
    return out;
}

ColorImage colorize_entry(const DatasetManifest& manifest, const ManifestEntry& entry, const Mapping& mapping,
                          int size) {
    const auto s = std::size_t(size);
    switch (mapping.kind) {
        case MappingKind::rgb:
            if (!entry.rgb_path) throw DataError("manifest entry " + entry.depth_path.string() + " has no rgb_path");
            return resize_bilinear(load_color(manifest.resolve(*entry.rgb_path)), s, s);
        case MappingKind::deco: {
            if (!mapping.deco) throw std::invalid_argument("deco mapping without a model");
            if (mapping.deco->config().input_size != size)
                throw ConfigError("deco input_size " + std::to_string(mapping.deco->config().input_size) +
                                  " differs from image size " + std::to_string(size));
            return colorize_image(*mapping.deco, depth_to_gray(load_depth(manifest.resolve(entry.depth_path)), size));
        }
        default:
            return handcrafted_colorization(mapping.kind, load_depth(manifest.resolve(entry.depth_path)), size,
                                            mapping.normals);
    }
}

LabeledImages load_mapped_split(const DatasetManifest& manifest, Split split, const Mapping& mapping, int size) {
    LabeledImages out;
    out.classes = manifest.classes();
    const auto index = manifest.class_index();
    for (const ManifestEntry* e : manifest.in_split(split)) {
        if (mapping.kind == MappingKind::deco) {
            // Keep the unrounded network output so training sees what the colorizer produced.
            if (!mapping.deco) throw std::invalid_argument("deco mapping without a model");
            if (mapping.deco->config().input_size != size)
                throw ConfigError("deco input_size " + std::to_string(mapping.deco->config().input_size) +
                                  " differs from image size " + std::to_string(size));
            NoGradGuard guard;
            const GrayImage g = depth_to_gray(load_depth(manifest.resolve(e->depth_path)), size);
            Tensor y = mapping.deco->forward(gray_to_input(g, size, mapping.deco->dtype()), Mode::eval);
            out.images.push_back(y.to(DType::f64));
        } else {
            out.images.push_back(color_to_tensor(colorize_entry(manifest, *e, mapping, size)));
        }
        out.labels.push_back(index.at(e->class_label));
    }
    return out;
}

}  // namespace deco
