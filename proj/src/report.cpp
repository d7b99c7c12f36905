#include "deco/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deco/json_fields.hpp"

namespace deco {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string EvalReport::recall_csv() const {
    std::string out = "rank,class,recall,support\n";
    for (std::size_t i = 0; i < recalls.size(); ++i) {
        const ClassRecall& r = recalls[i];
        out += std::to_string(i + 1) + "," + csv_field(r.label) + "," +
               (r.recall ? format_real(*r.recall) : std::string("undefined")) + "," + std::to_string(r.support) +
               "\n";
    }
    return out;
}

std::string EvalReport::confusion_csv() const {
    std::string out = "true/predicted";
    for (const std::string& c : classes) out += "," + csv_field(c);
    out += "\n";
    for (std::size_t i = 0; i < confusion.size(); ++i) {
        out += csv_field(classes[i]);
        for (std::size_t v : confusion[i]) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

std::string EvalReport::summary() const {
    std::ostringstream s;
    s << "mapping: " << mapping << "\n";
    s << "split: " << split << " (" << samples << " samples, " << classes.size() << " classes)\n";
    s << "accuracy: " << format_real(accuracy) << "\n";
    s << "backbone checkpoint: " << (backbone_checkpoint.empty() ? "-" : backbone_checkpoint) << "\n";
    s << "per-class recall:\n";
    for (const ClassRecall& r : recalls)
        s << "  " << r.label << ": " << (r.recall ? format_real(*r.recall) : std::string("undefined")) << " (n="
          << r.support << ")\n";
    for (const std::string& w : warnings) s << "warning: " << w << "\n";
    return s.str();
}

void to_json(nlohmann::json& j, const ClassRecall& r) {
    j = nlohmann::json{{"class", r.label}, {"support", r.support}};
    j["recall"] = r.recall ? nlohmann::json(*r.recall) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ClassRecall& r) {
    r.label = j.at("class").get<std::string>();
    r.support = j.at("support").get<std::size_t>();
    if (j.at("recall").is_null())
        r.recall.reset();
    else
        r.recall = j.at("recall").get<double>();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"mapping", r.mapping},
                       {"split", r.split},
                       {"classes", r.classes},
                       {"confusion", r.confusion},
                       {"accuracy", r.accuracy},
                       {"per_class_recall", r.recalls},
                       {"samples", r.samples},
                       {"backbone_checkpoint", r.backbone_checkpoint},
                       {"trunk_checksum", r.trunk_checksum},
                       {"split_checksum", r.split_checksum},
                       {"warnings", r.warnings},
                       {"config", r.config}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    try {
        r.mapping = j.at("mapping").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.classes = j.at("classes").get<std::vector<std::string>>();
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
        r.accuracy = j.at("accuracy").get<double>();
        r.recalls = j.at("per_class_recall").get<std::vector<ClassRecall>>();
        r.samples = j.at("samples").get<std::size_t>();
        r.backbone_checkpoint = j.value("backbone_checkpoint", "");
        r.trunk_checksum = j.value("trunk_checksum", "");
        r.split_checksum = j.value("split_checksum", "");
        r.warnings = j.value("warnings", std::vector<std::string>{});
        r.config = j.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed eval report: ") + e.what());
    }
}

EvalReport build_eval_report(std::span<const int> predictions, std::span<const int> labels,
                             const std::vector<std::string>& classes, const std::string& mapping) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("predictions/labels size mismatch");
    if (labels.empty()) throw DataError("evaluation split is empty");
    const std::size_t k = classes.size();
    EvalReport r;
    r.mapping = mapping;
    r.classes = classes;
    r.samples = labels.size();
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= k || predictions[i] < 0 || std::size_t(predictions[i]) >= k)
            throw std::out_of_range("class index out of range");
        ++r.confusion[std::size_t(labels[i])][std::size_t(predictions[i])];
    }
    std::size_t trace = 0;
    for (std::size_t c = 0; c < k; ++c) {
        trace += r.confusion[c][c];
        ClassRecall cr{classes[c], std::nullopt, 0};
        for (std::size_t v : r.confusion[c]) cr.support += v;
        if (cr.support > 0) cr.recall = double(r.confusion[c][c]) / double(cr.support);
        r.recalls.push_back(cr);
    }
    r.accuracy = double(trace) / double(labels.size());
    std::stable_sort(r.recalls.begin(), r.recalls.end(), [](const ClassRecall& a, const ClassRecall& b) {
        if (a.recall.has_value() != b.recall.has_value()) return a.recall.has_value();
        if (a.recall && *a.recall != *b.recall) return *a.recall > *b.recall;
        return a.label < b.label;
    });
    return r;
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& dir) {
    write_text_file(dir / "eval_report.json", nlohmann::json(report).dump(2) + "\n");
    write_text_file(dir / "per_class_recall.csv", report.recall_csv());
    write_text_file(dir / "confusion.csv", report.confusion_csv());
    write_text_file(dir / "summary.txt", report.summary());
}

EvalReport read_eval_report(const std::filesystem::path& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw MissingArtifactError("eval report not found: " + json_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + json_path.string() + ": " + e.what());
    }
    return j.get<EvalReport>();
}

std::string recall_chart_svg(const EvalReport& report) {
    const int bar_h = 18, gap = 6, label_w = 180, chart_w = 400, top = 40, margin = 20;
    const int n = int(report.recalls.size());
    const int width = margin + label_w + chart_w + 70, height = top + n * (bar_h + gap) + margin;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << margin << "\" y=\"22\" font-size=\"14\">Per-class recall (" << xml_escape(report.mapping)
      << ", accuracy " << format_real(report.accuracy) << ")</text>\n";
    for (int i = 0; i < n; ++i) {
        const ClassRecall& r = report.recalls[std::size_t(i)];
        const int y = top + i * (bar_h + gap);
        s << "<text x=\"" << margin + label_w - 6 << "\" y=\"" << y + bar_h - 5 << "\" text-anchor=\"end\">"
          << xml_escape(r.label) << "</text>\n";
        if (r.recall) {
            const int w = int(*r.recall * chart_w + 0.5);
            s << "<rect x=\"" << margin + label_w << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << bar_h
              << "\" fill=\"#3b6ea8\"/>\n";
            s << "<text x=\"" << margin + label_w + w + 4 << "\" y=\"" << y + bar_h - 5 << "\">"
              << format_real(*r.recall) << "</text>\n";
        } else {
            s << "<text x=\"" << margin + label_w + 4 << "\" y=\"" << y + bar_h - 5 << "\">undefined</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

std::string split_checksum(const DatasetManifest& manifest, Split split) {
    std::string text;
    for (const ManifestEntry* e : manifest.in_split(split))
        text += e->depth_path.generic_string() + "\t" + e->class_label + "\t" + e->instance_id + "\n";
    return sha256_hex(text);
}

std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
    return grid;
}

void FusionConfig::validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("fusion.alpha must be in [0,1]");
    if (alpha_grid.empty()) throw ConfigError("fusion.alpha_grid must not be empty");
    for (double a : alpha_grid)
        if (!(a >= 0 && a <= 1)) throw ConfigError("fusion.alpha_grid values must be in [0,1]");
}

void to_json(nlohmann::json& j, const FusionConfig& c) {
    j = nlohmann::json{{"alpha", c.alpha}, {"alpha_grid", c.alpha_grid}};
}

void from_json(const nlohmann::json& j, FusionConfig& c) {
    using namespace json_fields;
    require_object(j, {"alpha", "alpha_grid"}, "fusion");
    read(j, "alpha", c.alpha, "fusion");
    read(j, "alpha_grid", c.alpha_grid, "fusion");
}

std::size_t fuse_predictions(std::span<const double> rgb, std::span<const double> depth, double alpha) {
    if (rgb.size() != depth.size()) throw DataError("fusion: logit vectors differ in length");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("fusion: alpha must be in [0,1]");
    std::vector<double> fused(rgb.size());
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = alpha * rgb[i] + (1.0 - alpha) * depth[i];
    return argmax_first(fused);
}

std::size_t fuse_predictions(const LogitVector& rgb, const LogitVector& depth, double alpha) {
    if (rgb.classes != depth.classes) throw DataError("fusion: RGB and depth logits score different class lists");
    return fuse_predictions(rgb.scores, depth.scores, alpha);
}

double cross_validate_alpha(const std::vector<std::vector<double>>& rgb, const std::vector<std::vector<double>>& depth,
                            std::span<const int> labels, const std::vector<double>& grid) {
    if (grid.empty()) throw ConfigError("cross_validate_alpha: empty grid");
    if (labels.empty()) throw DataError("cross_validate_alpha: empty validation set");
    if (rgb.size() != labels.size() || depth.size() != labels.size())
        throw DataError("cross_validate_alpha: logits and labels differ in count");
    double best_alpha = 0, best_acc = -1;
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    for (double a : sorted) {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) hit += int(fuse_predictions(rgb[i], depth[i], a)) == labels[i];
        const double acc = double(hit) / double(labels.size());
        if (acc > best_acc) {
            best_acc = acc;
            best_alpha = a;
        }
    }
    return best_alpha;
}

std::vector<std::vector<double>> logit_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("logit_rows: expected [B,K], got " + shape_str(logits.shape()));
    const std::vector<double> v = logits.to_vector();
    const std::size_t k = logits.dim(1);
    std::vector<std::vector<double>> rows(logits.dim(0));
    for (std::size_t b = 0; b < rows.size(); ++b) rows[b].assign(v.begin() + long(b * k), v.begin() + long((b + 1) * k));
    return rows;
}

}  // namespace deco
