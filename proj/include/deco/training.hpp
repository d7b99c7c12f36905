#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deco/optim.hpp"

namespace deco {

enum class Phase { pretrain, phase1, phase2, finetune };

std::string to_string(Phase phase);
Phase parse_phase(const std::string& name);

struct TrainConfig {
    Phase phase = Phase::phase1;
    SolverKind solver = SolverKind::nesterov;
    double base_lr = 0.007;
    int epochs = 50;
    double step_fraction = 0.45;
    double gamma = 0.1;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double momentum = 0.9;

    // phase1: nesterov 0.007 / 50 epochs; finetune: sgd 0.001 / 90 epochs; both step down after 45%.
    static TrainConfig defaults(Phase phase);

    LrSchedule schedule() const;
    OptimizerState make_optimizer() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing fields take the defaults of the given (or default) phase.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double val_accuracy = 0;
};

struct TrainHistory {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_val_accuracy = 0;

    // epoch,lr,train_loss,train_accuracy,val_accuracy
    std::string to_csv() const;
};

// Shuffled index order split into consecutive batches (the last one may be short).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng);

// First index of the maximum.
std::size_t argmax_first(std::span<const double> scores);

// Row-wise argmax of a [B, K] tensor.
std::vector<int> predict(const Tensor& logits);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Fixed-precision text form used in every emitted table ("%.6f").
std::string format_real(double value);

// Writes text exactly (binary mode, no locale); creates parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace deco
