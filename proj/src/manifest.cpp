#include "deco/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "deco/error.hpp"
#include "deco/random.hpp"

namespace deco {

namespace fs = std::filesystem;

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw DataError("unknown split '" + name + "' (expected train, val or test)");
}

std::string to_string(SplitMode mode) { return mode == SplitMode::sample ? "sample" : "instance"; }

SplitMode parse_split_mode(const std::string& name) {
    if (name == "sample") return SplitMode::sample;
    if (name == "instance") return SplitMode::instance;
    throw ConfigError("unknown split mode '" + name + "' (expected sample or instance)");
}

fs::path DatasetManifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }

std::vector<std::string> DatasetManifest::classes() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.class_label);
    return {s.begin(), s.end()};
}

std::map<std::string, int> DatasetManifest::class_index() const {
    std::map<std::string, int> m;
    int i = 0;
    for (const auto& c : classes()) m[c] = i++;
    return m;
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(&e);
    return out;
}

std::size_t DatasetManifest::count(Split split) const {
    return std::size_t(std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.split == split; }));
}

namespace {

std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw DataError("manifest line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    return fields;
}

std::string portable(const fs::path& p) { return p.generic_string(); }

}  // namespace

std::string manifest_to_csv(const DatasetManifest& manifest) {
    std::ostringstream os;
    os << kManifestHeader << '\n';
    for (const auto& e : manifest.entries) {
        os << quote(portable(e.depth_path)) << ',' << (e.rgb_path ? quote(portable(*e.rgb_path)) : "") << ','
           << (e.mask_path ? quote(portable(*e.mask_path)) : "") << ',' << quote(e.class_label) << ','
           << quote(e.instance_id) << ',' << to_string(e.split) << '\n';
    }
    return os.str();
}

DatasetManifest manifest_from_csv(const std::string& text, const fs::path& root) {
    DatasetManifest m;
    m.root = root;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kManifestHeader)
                throw DataError("manifest header must be '" + std::string(kManifestHeader) + "', got '" + line + "'");
            header_seen = true;
            continue;
        }
        auto f = split_csv_line(line, line_no);
        if (f.size() != 6)
            throw DataError("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                            std::to_string(f.size()));
        if (f[0].empty() || f[3].empty() || f[4].empty())
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": depth_path, class_label and instance_id are required");
        ManifestEntry e;
        e.depth_path = f[0];
        if (!f[1].empty()) e.rgb_path = fs::path(f[1]);
        if (!f[2].empty()) e.mask_path = fs::path(f[2]);
        e.class_label = f[3];
        e.instance_id = f[4];
        e.split = parse_split(f[5]);
        m.entries.push_back(std::move(e));
    }
    if (!header_seen) throw DataError("manifest is empty");
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("manifest not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_csv(ss.str(), path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    // Re-root entries relative to the destination directory when possible.
    DatasetManifest out = manifest;
    out.root = path.parent_path();
    for (auto& e : out.entries) {
        auto rebase = [&](const fs::path& p) {
            const fs::path abs = fs::weakly_canonical(fs::absolute(manifest.resolve(p)));
            const fs::path base = fs::weakly_canonical(fs::absolute(out.root.empty() ? fs::path(".") : out.root));
            const fs::path rel = abs.lexically_relative(base);
            return (!rel.empty() && *rel.begin() != "..") ? rel : abs;
        };
        e.depth_path = rebase(e.depth_path);
        if (e.rgb_path) e.rgb_path = rebase(*e.rgb_path);
        if (e.mask_path) e.mask_path = rebase(*e.mask_path);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write manifest: " + path.string());
    os << manifest_to_csv(out);
}

DatasetManifest build_washington_manifest(const fs::path& root) {
    if (!fs::is_directory(root)) throw MissingArtifactError("dataset root not found: " + root.string());
    DatasetManifest m;
    m.root = root;
    const std::string suffix = "_depthcrop.png";
    std::vector<fs::path> files;
    for (const auto& it : fs::recursive_directory_iterator(root)) {
        if (!it.is_regular_file()) continue;
        const std::string name = it.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix)) files.push_back(it.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const fs::path rel = f.lexically_relative(root);
        std::vector<std::string> parts;
        for (const auto& p : rel) parts.push_back(p.string());
        if (parts.size() < 3) throw DataError("expected <class>/<instance>/<file> layout, got " + rel.string());
        const std::string name = f.filename().string();
        const std::string stem = name.substr(0, name.size() - suffix.size());
        ManifestEntry e;
        e.depth_path = rel;
        e.class_label = parts[0];
        e.instance_id = parts[1];
        const fs::path rgb = f.parent_path() / (stem + "_crop.png");
        const fs::path mask = f.parent_path() / (stem + "_maskcrop.png");
        if (fs::exists(rgb)) e.rgb_path = rgb.lexically_relative(root);
        if (fs::exists(mask)) e.mask_path = mask.lexically_relative(root);
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty()) throw DataError("no *_depthcrop.png files under " + root.string());
    return m;
}

std::string first_token(const std::string& label) {
    const auto pos = label.find_first_of(" \t_");
    if (pos == 0) {
        // Leading separators: skip them so "_foo" still yields "foo".
        const auto start = label.find_first_not_of(" \t_");
        if (start == std::string::npos) return label;
        return first_token(label.substr(start));
    }
    return pos == std::string::npos ? label : label.substr(0, pos);
}

DatasetManifest merge_classes_by_first_token(DatasetManifest manifest) {
    for (auto& e : manifest.entries) e.class_label = first_token(e.class_label);
    return manifest;
}

DatasetManifest make_instance_split(DatasetManifest manifest, std::uint64_t seed, double val_fraction,
                                    SplitMode mode) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("val_fraction must be in [0, 1), got " + std::to_string(val_fraction));
    std::mt19937_64 rng(seed);
    for (auto& e : manifest.entries) e.split = Split::train;
    const auto classes = manifest.classes();

    if (mode == SplitMode::instance) {
        for (const auto& c : classes) {
            std::set<std::string> inst;
            for (const auto& e : manifest.entries)
                if (e.class_label == c) inst.insert(e.instance_id);
            if (inst.size() < 2)
                throw DataError("class '" + c + "' has a single instance; instance-level split needs at least 2");
            std::vector<std::string> ids(inst.begin(), inst.end());
            const std::string held = ids[draw_index(rng, ids.size())];
            for (auto& e : manifest.entries)
                if (e.class_label == c && e.instance_id == held) e.split = Split::test;
        }
    }

    std::vector<std::vector<std::size_t>> pool(classes.size());
    std::map<std::string, std::size_t> cidx;
    for (std::size_t i = 0; i < classes.size(); ++i) cidx[classes[i]] = i;
    std::size_t n_train = 0;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split == Split::train) {
            pool[cidx[manifest.entries[i].class_label]].push_back(i);
            ++n_train;
        }

    const auto total = std::size_t(std::floor(val_fraction * double(n_train) + 0.5));
    std::vector<std::size_t> quota(classes.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const double exact = val_fraction * double(pool[c].size());
        const std::size_t cap = pool[c].empty() ? 0 : pool[c].size() - 1;
        quota[c] = std::min(cap, std::size_t(std::floor(exact)));
        assigned += quota[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    // Largest remainder first; ties go to the earlier class.
    std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
    while (assigned < total) {
        bool progressed = false;
        for (const auto& [rem, c] : remainders) {
            if (assigned >= total) break;
            if (quota[c] + 1 < pool[c].size()) {
                ++quota[c];
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) break;
    }

    for (std::size_t c = 0; c < classes.size(); ++c) {
        auto ids = pool[c];
        shuffle_in_place(ids, rng);
        for (std::size_t k = 0; k < quota[c]; ++k) manifest.entries[ids[k]].split = Split::val;
    }
    return manifest;
}

DatasetManifest concat_manifests(const std::vector<DatasetManifest>& parts, const std::vector<std::string>& tags,
                                 ClassMerge mode) {
    if (mode == ClassMerge::disjoint && tags.size() != parts.size())
        throw ConfigError("disjoint concatenation needs one tag per manifest");
    DatasetManifest out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        for (auto e : parts[i].entries) {
            e.depth_path = fs::absolute(parts[i].resolve(e.depth_path));
            if (e.rgb_path) e.rgb_path = fs::absolute(parts[i].resolve(*e.rgb_path));
            if (e.mask_path) e.mask_path = fs::absolute(parts[i].resolve(*e.mask_path));
            if (mode == ClassMerge::disjoint) {
                e.class_label = tags[i] + ":" + e.class_label;
                e.instance_id = tags[i] + ":" + e.instance_id;
            }
            out.entries.push_back(std::move(e));
        }
    }
    return out;
}

}  // namespace deco
