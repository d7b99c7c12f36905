#include "deco/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace deco {

std::string to_string(SolverKind kind) {
    switch (kind) {
        case SolverKind::sgd_momentum: return "sgd";
        case SolverKind::nesterov: return "nesterov";
        case SolverKind::adam: return "adam";
    }
    return "?";
}

SolverKind parse_solver(const std::string& name) {
    if (name == "sgd" || name == "sgd_momentum") return SolverKind::sgd_momentum;
    if (name == "nesterov") return SolverKind::nesterov;
    if (name == "adam") return SolverKind::adam;
    throw ConfigError("unknown solver '" + name + "' (expected sgd, nesterov or adam)");
}

OptimizerState::OptimizerState(SolverKind kind, double learning_rate, double momentum)
    : kind_(kind), momentum_(momentum) {
    set_learning_rate(learning_rate);
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0,1)");
}

OptimizerState OptimizerState::adam(double learning_rate, double beta1, double beta2, double epsilon) {
    OptimizerState s(SolverKind::adam, learning_rate, 0.0);
    s.beta1_ = beta1;
    s.beta2_ = beta2;
    s.epsilon_ = epsilon;
    return s;
}

void OptimizerState::set_learning_rate(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    learning_rate_ = lr;
}

void OptimizerState::step(std::span<Parameter* const> params) {
    for (const Parameter* p : params)
        if (!p->frozen && !p->tensor.has_grad())
            throw std::logic_error("parameter '" + p->name + "' has no gradient (broken graph?)");

    ++steps_;
    const double lr = learning_rate_;
    const double mu = momentum_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));

    for (Parameter* p : params) {
        if (p->frozen) continue;
        Tensor& t = p->tensor;
        auto [it, fresh] = first_.try_emplace(p->name);
        if (fresh) it->second = Buffer(t.dtype(), t.numel());
        if (it->second.size() != t.numel())
            throw std::logic_error("moment buffer for '" + p->name + "' does not match parameter shape");
        Buffer* second = nullptr;
        if (kind_ == SolverKind::adam) {
            auto [jt, fresh2] = second_.try_emplace(p->name);
            if (fresh2) jt->second = Buffer(t.dtype(), t.numel());
            second = &jt->second;
        }
        dispatch(t.dtype(), [&]<typename T>() {
            auto theta = t.values<T>();
            auto g = std::as_const(t).grad_buffer().as<T>();
            auto v = it->second.as<T>();
            switch (kind_) {
                case SolverKind::sgd_momentum:
                    for (std::size_t i = 0; i < theta.size(); ++i) {
                        v[i] = static_cast<T>(mu * v[i] - lr * g[i]);
                        theta[i] += v[i];
                    }
                    break;
                case SolverKind::nesterov:
                    for (std::size_t i = 0; i < theta.size(); ++i) {
                        v[i] = static_cast<T>(mu * v[i] - lr * g[i]);
                        theta[i] += static_cast<T>(mu * v[i] - lr * g[i]);
                    }
                    break;
                case SolverKind::adam: {
                    auto m2 = second->as<T>();
                    for (std::size_t i = 0; i < theta.size(); ++i) {
                        v[i] = static_cast<T>(beta1_ * v[i] + (1.0 - beta1_) * g[i]);
                        m2[i] = static_cast<T>(beta2_ * m2[i] + (1.0 - beta2_) * g[i] * g[i]);
                        const double m_hat = v[i] / bc1;
                        const double v_hat = m2[i] / bc2;
                        theta[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + epsilon_));
                    }
                    break;
                }
            }
        });
    }
}

void optimizer_step(OptimizerState& state, std::span<Parameter* const> params) { state.step(params); }

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->tensor.zero_grad();
}

int LrSchedule::first_stepped_epoch() const {
    return static_cast<int>(std::floor(step_fraction * static_cast<double>(total_epochs)));
}

void LrSchedule::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (total_epochs <= 0) throw ConfigError("epochs must be positive");
    if (!(step_fraction > 0.0 && step_fraction <= 1.0)) throw ConfigError("step_fraction must lie in (0,1]");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
}

double lr_at(const LrSchedule& schedule, int epoch) {
    if (epoch < 0 || epoch >= schedule.total_epochs)
        throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0," +
                                std::to_string(schedule.total_epochs) + ")");
    return epoch < schedule.first_stepped_epoch() ? schedule.base_lr : schedule.base_lr * schedule.gamma;
}

}  // namespace deco
