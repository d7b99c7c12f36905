#include "deco/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "deco/json_fields.hpp"
#include "deco/random.hpp"

namespace deco {

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::pretrain: return "pretrain";
        case Phase::phase1: return "phase1";
        case Phase::phase2: return "phase2";
        case Phase::finetune: return "finetune";
    }
    return "?";
}

Phase parse_phase(const std::string& name) {
    if (name == "pretrain") return Phase::pretrain;
    if (name == "phase1") return Phase::phase1;
    if (name == "phase2") return Phase::phase2;
    if (name == "finetune") return Phase::finetune;
    throw ConfigError("unknown phase '" + name + "'");
}

TrainConfig TrainConfig::defaults(Phase phase) {
    TrainConfig c;
    c.phase = phase;
    switch (phase) {
        case Phase::phase1: break;
        case Phase::finetune:
            c.solver = SolverKind::sgd_momentum;
            c.base_lr = 0.001;
            c.epochs = 90;
            break;
        case Phase::phase2:
            c.base_lr = 0.01;
            c.epochs = 30;
            break;
        case Phase::pretrain:
            c.solver = SolverKind::adam;
            c.base_lr = 0.001;
            c.epochs = 12;
            c.step_fraction = 0.75;
            break;
    }
    return c;
}

LrSchedule TrainConfig::schedule() const { return LrSchedule{base_lr, epochs, step_fraction, gamma}; }

OptimizerState TrainConfig::make_optimizer() const {
    if (solver == SolverKind::adam) return OptimizerState::adam(base_lr);
    return OptimizerState(solver, base_lr, momentum);
}

void TrainConfig::validate() const {
    if (!(base_lr > 0)) throw ConfigError("train.base_lr must be positive");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(step_fraction >= 0 && step_fraction <= 1)) throw ConfigError("train.step_fraction must be in [0,1]");
    if (!(gamma > 0)) throw ConfigError("train.gamma must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0,1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"phase", to_string(c.phase)},   {"solver", to_string(c.solver)},
                       {"base_lr", c.base_lr},          {"epochs", c.epochs},
                       {"step_fraction", c.step_fraction}, {"gamma", c.gamma},
                       {"batch_size", c.batch_size},    {"seed", c.seed},
                       {"momentum", c.momentum}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    using namespace json_fields;
    require_object(j,
                   {"phase", "solver", "base_lr", "epochs", "step_fraction", "gamma", "batch_size", "seed",
                    "momentum"},
                   "train");
    std::string phase = to_string(c.phase);
    read(j, "phase", phase, "train");
    c = TrainConfig::defaults(parse_phase(phase));
    std::string solver = to_string(c.solver);
    read(j, "solver", solver, "train");
    c.solver = parse_solver(solver);
    read(j, "base_lr", c.base_lr, "train");
    read(j, "epochs", c.epochs, "train");
    read(j, "step_fraction", c.step_fraction, "train");
    read(j, "gamma", c.gamma, "train");
    read(j, "batch_size", c.batch_size, "train");
    read(j, "seed", c.seed, "train");
    read(j, "momentum", c.momentum, "train");
}

std::string TrainHistory::to_csv() const {
    std::string out = "epoch,lr,train_loss,train_accuracy,val_accuracy\n";
    for (const EpochLog& e : epochs) {
        char lr[32];
        std::snprintf(lr, sizeof lr, "%.10g", e.lr);
        out += std::to_string(e.epoch) + "," + lr + "," + format_real(e.train_loss) + "," +
               format_real(e.train_accuracy) + "," + format_real(e.val_accuracy) + "\n";
    }
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += std::size_t(batch_size))
        batches.emplace_back(order.begin() + long(i), order.begin() + long(std::min(n, i + std::size_t(batch_size))));
    return batches;
}

std::size_t argmax_first(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("argmax of empty scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

std::vector<int> predict(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("predict: expected [B,K] logits, got " + shape_str(logits.shape()));
    const std::vector<double> v = logits.to_vector();
    const std::size_t k = logits.dim(1);
    std::vector<int> out(logits.dim(0));
    for (std::size_t b = 0; b < out.size(); ++b)
        out[b] = int(argmax_first(std::span<const double>(v).subspan(b * k, k)));
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
    if (labels.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
    return double(hit) / double(labels.size());
}

std::string format_real(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace deco
