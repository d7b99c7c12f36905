#include "deco/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "deco/error.hpp"

namespace deco {

namespace fs = std::filesystem;

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double normal(std::mt19937_64& rng) {
    // Box-Muller, one draw per call.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

const std::vector<std::string>& synth_primitives() {
    static const std::vector<std::string> names = {"spherecap", "box",       "cone", "ramp",  "torus", "cylinder",
                                                   "pyramid",   "ellipsoid", "bowl", "wedge", "disk"};
    return names;
}

std::vector<std::string> synth_reference_classes() { return {"spherecap", "box", "cone", "ramp", "torus"}; }

std::vector<std::string> synth_testbed_classes() { return {"cylinder", "pyramid", "ellipsoid", "bowl"}; }

void SynthConfig::validate() const {
    if (classes.empty()) throw ConfigError("synth: classes must not be empty");
    std::set<std::string> seen;
    for (const auto& c : classes) {
        const auto& known = synth_primitives();
        if (std::find(known.begin(), known.end(), c) == known.end())
            throw ConfigError("synth: unknown primitive '" + c + "'");
        if (!seen.insert(c).second) throw ConfigError("synth: duplicate class '" + c + "'");
    }
    if (instances_per_class < 1) throw ConfigError("synth: instances_per_class must be >= 1");
    if (samples_per_instance < 1) throw ConfigError("synth: samples_per_instance must be >= 1");
    if (size < 16 || size % 4 != 0) throw ConfigError("synth: size must be a multiple of 4 and >= 16");
    if (noise < 0) throw ConfigError("synth: noise must be >= 0");
    if (!(hole_rate >= 0 && hole_rate < 1)) throw ConfigError("synth: hole_rate must be in [0, 1)");
    if (!(background_mm > 100 && background_mm < 60000)) throw ConfigError("synth: background_mm out of range");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"classes", c.classes},
                       {"instances_per_class", c.instances_per_class},
                       {"samples_per_instance", c.samples_per_instance},
                       {"size", c.size},
                       {"noise", c.noise},
                       {"hole_rate", c.hole_rate},
                       {"seed", c.seed},
                       {"emit_rgb", c.emit_rgb},
                       {"background_mm", c.background_mm}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    static const std::set<std::string> keys = {"classes", "instances_per_class", "samples_per_instance",
                                               "size",    "noise",               "hole_rate",
                                               "seed",    "emit_rgb",            "background_mm"};
    if (!j.is_object()) throw ConfigError("synth config must be an object");
    for (const auto& [k, v] : j.items())
        if (!keys.count(k)) throw ConfigError("synth config: unknown key '" + k + "'");
    try {
        if (j.contains("classes")) c.classes = j.at("classes").get<std::vector<std::string>>();
        if (j.contains("instances_per_class")) c.instances_per_class = j.at("instances_per_class").get<int>();
        if (j.contains("samples_per_instance")) c.samples_per_instance = j.at("samples_per_instance").get<int>();
        if (j.contains("size")) c.size = j.at("size").get<int>();
        if (j.contains("noise")) c.noise = j.at("noise").get<double>();
        if (j.contains("hole_rate")) c.hole_rate = j.at("hole_rate").get<double>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("emit_rgb")) c.emit_rgb = j.at("emit_rgb").get<bool>();
        if (j.contains("background_mm")) c.background_mm = j.at("background_mm").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
}

InstanceParams sample_instance(const std::string& primitive, std::mt19937_64& rng) {
    InstanceParams p;
    p.extent = uniform(rng, 0.85, 1.05);
    p.height_ratio = uniform(rng, 0.5, 0.9);
    if (primitive == "spherecap") {
        p.a = uniform(rng, 1.05, 1.8);  // radius of curvature / footprint radius
    } else if (primitive == "box") {
        p.a = uniform(rng, 0.55, 0.9), p.b = uniform(rng, 0.55, 0.9);
    } else if (primitive == "ramp" || primitive == "wedge") {
        p.a = uniform(rng, 0.75, 0.95), p.b = uniform(rng, 0.45, 0.85);
    } else if (primitive == "torus") {
        p.a = uniform(rng, 0.55, 0.7), p.b = uniform(rng, 0.22, 0.3);
    } else if (primitive == "cylinder") {
        p.a = uniform(rng, 0.75, 0.95), p.b = uniform(rng, 0.35, 0.55);
    } else if (primitive == "pyramid") {
        p.a = uniform(rng, 0.6, 0.85);
    } else if (primitive == "ellipsoid") {
        p.a = uniform(rng, 0.85, 1.0), p.b = uniform(rng, 0.4, 0.6);
    } else if (primitive == "bowl" || primitive == "disk") {
        p.a = uniform(rng, 0.75, 1.0);
    } else if (primitive != "cone") {
        throw ConfigError("unknown primitive '" + primitive + "'");
    }
    for (auto& c : p.albedo) c = uniform(rng, 0.25, 1.0);
    return p;
}

Pose sample_pose(std::mt19937_64& rng) {
    Pose p;
    p.dx = uniform(rng, -1.0, 1.0);
    p.dy = uniform(rng, -1.0, 1.0);
    p.angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    p.scale = uniform(rng, 0.88, 1.08);
    p.tilt_x = uniform(rng, -0.1, 0.1);
    p.tilt_y = uniform(rng, -0.1, 0.1);
    p.background_gray = uniform(rng, 0.3, 0.6);
    p.light_azimuth = uniform(rng, -0.6, 0.6);
    return p;
}

namespace {

// Height profile in [0, 1] on the unit footprint; negative when (u, v) is off the object.
double profile(const std::string& prim, const InstanceParams& p, double u, double v) {
    const double r = std::hypot(u, v);
    if (prim == "spherecap") {
        if (r >= 1) return -1;
        const double rc = p.a, base = std::sqrt(rc * rc - 1.0);
        return (std::sqrt(rc * rc - r * r) - base) / (rc - base);
    }
    if (prim == "box") return (std::abs(u) < p.a && std::abs(v) < p.b) ? 1.0 : -1;
    if (prim == "cone") return r < 1 ? 1.0 - r : -1;
    if (prim == "ramp") {
        if (std::abs(u) >= p.a || std::abs(v) >= p.b) return -1;
        return 0.15 + 0.85 * (u + p.a) / (2 * p.a);
    }
    if (prim == "torus") {
        const double d = std::abs(r - p.a);
        return d < p.b ? std::sqrt(p.b * p.b - d * d) / p.b : -1;
    }
    if (prim == "cylinder") {
        if (std::abs(u) >= p.a || std::abs(v) >= p.b) return -1;
        return std::sqrt(1.0 - (v / p.b) * (v / p.b));
    }
    if (prim == "pyramid") {
        const double m = std::max(std::abs(u), std::abs(v));
        return m < p.a ? 1.0 - m / p.a : -1;
    }
    if (prim == "ellipsoid") {
        const double q = (u / p.a) * (u / p.a) + (v / p.b) * (v / p.b);
        return q < 1 ? std::sqrt(1.0 - q) : -1;
    }
    if (prim == "bowl") return r < p.a ? 0.25 + 0.75 * (r / p.a) * (r / p.a) : -1;
    if (prim == "wedge") {
        if (std::abs(u) >= p.a || std::abs(v) >= p.b) return -1;
        return 1.0 - std::abs(u) / p.a;
    }
    if (prim == "disk") return r < p.a ? 1.0 : -1;
    throw ConfigError("unknown primitive '" + prim + "'");
}

}  // namespace

SynthSample render_primitive(const std::string& primitive, const InstanceParams& inst, const Pose& pose, int size,
                             double background_mm, double noise, double hole_rate, std::mt19937_64& rng) {
    const std::size_t n = std::size_t(size);
    const double radius = 0.32 * size * inst.extent * pose.scale;
    const double height_mm = inst.height_ratio * radius;
    const double cx = 0.5 * size + pose.dx * 0.06 * size, cy = 0.5 * size + pose.dy * 0.06 * size;
    const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);

    RealImage field(n, n);
    Mask mask(n, n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double px = (double(x) + 0.5 - cx) / radius, py = (double(y) + 0.5 - cy) / radius;
            const double u = ca * px + sa * py, v = -sa * px + ca * py;
            const double plane = background_mm + pose.tilt_x * (double(x) - cx) + pose.tilt_y * (double(y) - cy);
            const double h = profile(primitive, inst, u, v);
            field.at(x, y) = h >= 0 ? plane - height_mm * h : plane;
            mask.at(x, y) = h >= 0 ? 255 : 0;
        }

    SynthSample s;
    s.mask = mask;
    s.depth = DepthMap(n, n);
    s.rgb = ColorImage(n, n);

    std::array<double, 3> light{std::sin(pose.light_azimuth) * 0.5, -0.5, 0.75};
    const double ln = std::sqrt(light[0] * light[0] + light[1] * light[1] + light[2] * light[2]);
    for (auto& l : light) l /= ln;

    auto sample = [&](long x, long y) {
        return field.at(std::size_t(std::clamp(x, 0L, long(n) - 1)), std::size_t(std::clamp(y, 0L, long(n) - 1)));
    };
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double gx = 0.5 * (sample(long(x) + 1, long(y)) - sample(long(x) - 1, long(y)));
            const double gy = 0.5 * (sample(long(x), long(y) + 1) - sample(long(x), long(y) - 1));
            const double nn = std::sqrt(gx * gx + gy * gy + 1.0);
            const double shade =
                0.25 + 0.75 * std::max(0.0, (-gx * light[0] - gy * light[1] + light[2]) / nn);
            for (int c = 0; c < 3; ++c) {
                const double base = mask.at(x, y) ? inst.albedo[std::size_t(c)] : pose.background_gray;
                s.rgb.at(x, y, c) = to_u8(255.0 * base * shade + 3.0 * normal(rng));
            }
        }

    for (std::size_t i = 0; i < n * n; ++i) {
        double d = field.data[i] + (noise > 0 ? noise * normal(rng) : 0.0);
        d = std::clamp(std::floor(d + 0.5), 1.0, 65535.0);
        s.depth.data[i] = std::uint16_t(d);
        if (hole_rate > 0 && uniform01(rng) < hole_rate) s.depth.data[i] = 0;
    }
    return s;
}

DatasetManifest gen_synth_depth_dataset(const SynthConfig& config, const fs::path& out_dir) {
    config.validate();
    fs::create_directories(out_dir);
    DatasetManifest m;
    m.root = out_dir;
    for (std::size_t ci = 0; ci < config.classes.size(); ++ci) {
        const std::string& cls = config.classes[ci];
        for (int i = 0; i < config.instances_per_class; ++i) {
            // Independent stream per instance so subsets regenerate identically.
            std::mt19937_64 rng(config.seed * 1000003ULL + ci * 7919ULL + std::uint64_t(i) * 104729ULL + 17ULL);
            const InstanceParams inst = sample_instance(cls, rng);
            const std::string instance_id = cls + "_" + std::to_string(i + 1);
            const fs::path dir = fs::path(cls) / instance_id;
            for (int k = 0; k < config.samples_per_instance; ++k) {
                const Pose pose = sample_pose(rng);
                const SynthSample s = render_primitive(cls, inst, pose, config.size, config.background_mm,
                                                       config.noise, config.hole_rate, rng);
                const std::string stem = instance_id + "_" + std::to_string(k + 1);
                ManifestEntry e;
                e.depth_path = dir / (stem + "_depthcrop.png");
                e.mask_path = dir / (stem + "_maskcrop.png");
                save_depth(out_dir / e.depth_path, s.depth);
                save_gray(out_dir / *e.mask_path, s.mask);
                if (config.emit_rgb) {
                    e.rgb_path = dir / (stem + "_crop.png");
                    save_color(out_dir / *e.rgb_path, s.rgb);
                }
                e.class_label = cls;
                e.instance_id = instance_id;
                m.entries.push_back(std::move(e));
            }
        }
    }
    save_manifest(m, out_dir / "manifest.csv");
    nlohmann::json j = config;
    std::ofstream(out_dir / "synth_config.json") << j.dump(2) << '\n';
    return m;
}

}  // namespace deco
