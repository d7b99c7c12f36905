#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/image.hpp"
#include "deco/manifest.hpp"
#include "deco/random.hpp"

namespace deco {

// Shape primitives the generator can render.
const std::vector<std::string>& synth_primitives();
// Reference set (A) and a disjoint testbed (B).
std::vector<std::string> synth_reference_classes();
std::vector<std::string> synth_testbed_classes();

struct SynthConfig {
    std::vector<std::string> classes = synth_reference_classes();
    int instances_per_class = 4;
    int samples_per_instance = 25;
    int size = 64;
    double noise = 1.0;  // additive Gaussian stddev, mm
    double hole_rate = 0.0;
    std::uint64_t seed = 0;
    bool emit_rgb = true;
    double background_mm = 1000.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Per-instance shape parameters and surface color.
struct InstanceParams {
    double a = 1.0, b = 1.0;
    double extent = 1.0;        // footprint scale
    double height_ratio = 0.7;  // peak height / footprint radius
    std::array<double, 3> albedo{0.8, 0.8, 0.8};
};

struct Pose {
    double dx = 0, dy = 0;  // pixels
    double angle = 0;       // radians
    double scale = 1.0;
    double tilt_x = 0, tilt_y = 0;  // background slope, mm per pixel
    double background_gray = 0.5;
    double light_azimuth = 0.0;
};

struct SynthSample {
    DepthMap depth;
    ColorImage rgb;
    Mask mask;
};

InstanceParams sample_instance(const std::string& primitive, std::mt19937_64& rng);
Pose sample_pose(std::mt19937_64& rng);

// Renders one primitive onto the background plane. Noise and holes draw from rng.
SynthSample render_primitive(const std::string& primitive, const InstanceParams& inst, const Pose& pose, int size,
                             double background_mm, double noise, double hole_rate, std::mt19937_64& rng);

// Writes <out>/<class>/<class>_<i>/<class>_<i>_<k>_{depthcrop,crop,maskcrop}.png,
// <out>/manifest.csv and <out>/synth_config.json. All entries start in the train split.
DatasetManifest gen_synth_depth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace deco
