#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/backbone.hpp"

namespace deco {

struct ClassRecall {
    std::string label;
    std::optional<double> recall;  // empty when the class has no samples
    std::size_t support = 0;
};

struct EvalReport {
    std::string mapping;
    std::string split = "test";
    std::vector<std::string> classes;
    // confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
    double accuracy = 0;
    // Decreasing recall, ties by label; undefined recalls last.
    std::vector<ClassRecall> recalls;
    std::size_t samples = 0;
    std::string backbone_checkpoint;  // origin hash of the backbone
    std::string trunk_checksum;
    std::string split_checksum;  // identifies the evaluated entries
    std::vector<std::string> warnings;
    nlohmann::json config = nlohmann::json::object();

    // Per-class recall table: rank,class,recall,support ("undefined" for empty classes).
    std::string recall_csv() const;
    // Header row of predicted labels, one row per true label.
    std::string confusion_csv() const;
    std::string summary() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport build_eval_report(std::span<const int> predictions, std::span<const int> labels,
                             const std::vector<std::string>& classes, const std::string& mapping);

// eval_report.json, per_class_recall.csv, confusion.csv, summary.txt under dir.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport read_eval_report(const std::filesystem::path& json_path);

// Horizontal bar chart of the sorted per-class recalls.
std::string recall_chart_svg(const EvalReport& report);

// SHA-256 over the depth paths, labels and instance ids of one split, in manifest order.
std::string split_checksum(const DatasetManifest& manifest, Split split);

// 0, 0.05, ..., 1
std::vector<double> default_alpha_grid();

struct FusionConfig {
    double alpha = 0.5;
    std::vector<double> alpha_grid = default_alpha_grid();

    void validate() const;
};

void to_json(nlohmann::json& j, const FusionConfig& c);
void from_json(const nlohmann::json& j, FusionConfig& c);

// argmax of alpha * rgb + (1 - alpha) * depth; the first index wins exact ties.
std::size_t fuse_predictions(std::span<const double> rgb, std::span<const double> depth, double alpha);
// Also checks that both vectors score the same class list.
std::size_t fuse_predictions(const LogitVector& rgb, const LogitVector& depth, double alpha);

// Grid value with the highest fused accuracy; the smallest such value on ties.
double cross_validate_alpha(const std::vector<std::vector<double>>& rgb, const std::vector<std::vector<double>>& depth,
                            std::span<const int> labels, const std::vector<double>& grid);

// Logit matrix rows.
std::vector<std::vector<double>> logit_rows(const Tensor& logits);

}  // namespace deco
