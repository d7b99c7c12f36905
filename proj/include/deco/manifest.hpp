#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace deco {

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct ManifestEntry {
    std::filesystem::path depth_path;
    std::optional<std::filesystem::path> rgb_path;
    std::optional<std::filesystem::path> mask_path;
    std::string class_label;
    std::string instance_id;
    Split split = Split::train;

    bool operator==(const ManifestEntry&) const = default;
};

// Paths inside entries are absolute or relative to `root` (the manifest file's directory).
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
    // Sorted unique class labels.
    std::vector<std::string> classes() const;
    std::map<std::string, int> class_index() const;
    std::vector<const ManifestEntry*> in_split(Split split) const;
    std::size_t count(Split split) const;
};

// CSV with header depth_path,rgb_path,mask_path,class_label,instance_id,split.
// Empty rgb/mask cells mean absent. Fields containing commas or quotes are quoted.
inline constexpr const char* kManifestHeader = "depth_path,rgb_path,mask_path,class_label,instance_id,split";

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string manifest_to_csv(const DatasetManifest& manifest);
DatasetManifest manifest_from_csv(const std::string& text, const std::filesystem::path& root);

// Walks <root>/<class>/<instance>/<name>_depthcrop.png and pairs each with the
// sibling <name>_crop.png (RGB) and <name>_maskcrop.png (mask) when present.
DatasetManifest build_washington_manifest(const std::filesystem::path& root);

// Label text up to the first whitespace or underscore.
std::string first_token(const std::string& label);
DatasetManifest merge_classes_by_first_token(DatasetManifest manifest);

enum class SplitMode {
    sample,    // random stratified validation subset, everything else train
    instance,  // one instance per class held out as test, validation drawn from the remaining train
};

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& name);

// Deterministic given seed. The validation count is round(val_fraction * N) over
// the train pool, apportioned across classes by largest remainder so every class
// keeps at least one train entry.
DatasetManifest make_instance_split(DatasetManifest manifest, std::uint64_t seed, double val_fraction,
                                    SplitMode mode = SplitMode::sample);

enum class ClassMerge {
    merge,     // identical labels across sources are one class
    disjoint,  // labels are prefixed with the source tag
};

// Concatenates manifests. Entry paths are made absolute so the result can live anywhere.
DatasetManifest concat_manifests(const std::vector<DatasetManifest>& parts, const std::vector<std::string>& tags,
                                 ClassMerge mode);

}  // namespace deco
