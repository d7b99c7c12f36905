#pragma once

#include <string>
#include <vector>

#include "deco/backbone.hpp"
#include "deco/deco.hpp"
#include "deco/handcrafted.hpp"
#include "deco/manifest.hpp"

namespace deco {

enum class MappingKind { gray, colorjet, surface_normals, surface_normals_pp, deco, rgb };

std::string to_string(MappingKind kind);
MappingKind parse_mapping(const std::string& name);

// The depth colorizations compared in the harness, in presentation order.
const std::vector<MappingKind>& depth_mappings();

// A colorization source. `deco` must point at a model when kind == deco.
struct Mapping {
    MappingKind kind = MappingKind::gray;
    DecoModel* deco = nullptr;
    SurfaceNormalsParams normals;

    std::string name() const { return to_string(kind); }
};

// Validity-aware resize to size x size, then 0..255 normalisation.
GrayImage depth_to_gray(const DepthMap& depth, int size);

// One depth map through a hand-crafted mapping (gray, colorjet, surface_normals, surface_normals_pp),
// computed on the depth resized to size x size.
ColorImage handcrafted_colorization(MappingKind kind, const DepthMap& depth, int size,
                                    const SurfaceNormalsParams& normals = {});

// DE²CO input: depth_to_gray / 255 as [1,S,S].
LabeledImages load_deco_inputs(const DatasetManifest& manifest, Split split, int size);

// Every sample of a split as a [3,S,S] tensor in 0..255, produced by the mapping.
// The deco mapping runs the model in eval mode without recording gradients.
LabeledImages load_mapped_split(const DatasetManifest& manifest, Split split, const Mapping& mapping, int size);

// Single-image form of load_mapped_split for one manifest entry.
ColorImage colorize_entry(const DatasetManifest& manifest, const ManifestEntry& entry, const Mapping& mapping,
                          int size);

}  // namespace deco
