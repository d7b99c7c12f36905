#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "deco/tensor.hpp"

namespace deco {

// A trainable tensor with a stable dotted name ("deco.block3.conv1.weight").
// Frozen parameters still receive gradients but are never updated.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool frozen = false;
};

enum class SolverKind { sgd_momentum, nesterov, adam };

std::string to_string(SolverKind kind);
SolverKind parse_solver(const std::string& name);

class OptimizerState {
public:
    OptimizerState() = default;
    OptimizerState(SolverKind kind, double learning_rate, double momentum = 0.9);

    static OptimizerState adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                               double epsilon = 1e-8);

    SolverKind kind() const { return kind_; }
    double learning_rate() const { return learning_rate_; }
    void set_learning_rate(double lr);
    double momentum() const { return momentum_; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double epsilon() const { return epsilon_; }
    long step_count() const { return steps_; }

    // Velocity (sgd/nesterov) or first moment (adam), keyed by parameter name.
    const std::map<std::string, Buffer>& first_moments() const { return first_; }
    const std::map<std::string, Buffer>& second_moments() const { return second_; }

    void step(std::span<Parameter* const> params);

private:
    SolverKind kind_ = SolverKind::sgd_momentum;
    double learning_rate_ = 0.01;
    double momentum_ = 0.9;
    double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
    long steps_ = 0;
    std::map<std::string, Buffer> first_;
    std::map<std::string, Buffer> second_;
};

// sgd_momentum:  v <- mu*v - lr*g;  theta <- theta + v
// nesterov:      v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g
// adam:          bias-corrected first/second moments
// Frozen parameters are skipped. A non-frozen parameter without a gradient is an error.
void optimizer_step(OptimizerState& state, std::span<Parameter* const> params);

void zero_grads(std::span<Parameter* const> params);

// Piecewise-constant step schedule: base_lr before floor(step_fraction * total_epochs),
// base_lr * gamma from there on.
struct LrSchedule {
    double base_lr = 0.007;
    int total_epochs = 50;
    double step_fraction = 0.45;
    double gamma = 0.1;

    int first_stepped_epoch() const;
    void validate() const;
};

double lr_at(const LrSchedule& schedule, int epoch);

}  // namespace deco
