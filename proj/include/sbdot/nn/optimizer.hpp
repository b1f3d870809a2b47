#ifndef SBDOT_NN_OPTIMIZER_HPP
#define SBDOT_NN_OPTIMIZER_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "sbdot/ad/tape.hpp"
#include "sbdot/core.hpp"

namespace sbdot {

/// AdamW with decoupled weight decay and a linearly decaying learning rate:
/// lr(f) = base_lr + f * (final_lr - base_lr) for epoch fraction f in [0, 1].
struct AdamWConfig {
    double base_lr = 0.002;
    double final_lr = 0.0005;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamWConfig cfg;
    std::size_t step_count = 0;

    double learning_rate(double epoch_fraction) const {
        return cfg.base_lr + epoch_fraction * (cfg.final_lr - cfg.base_lr);
    }
};

inline void adamw_step(OptimizerState& state, const std::vector<ad::Param*>& params,
                       double epoch_fraction) {
    if (epoch_fraction < 0.0 || epoch_fraction > 1.0)
        throw ParameterError("adamw_step: epoch_fraction must lie in [0, 1]");
    const double lr = state.learning_rate(epoch_fraction);
    state.step_count += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (ad::Param* p : params) {
        if (p->m.size() != p->size()) p->m.assign(p->size(), 0.0);
        if (p->v.size() != p->size()) p->v.assign(p->size(), 0.0);
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double g = p->grad[i];
            if (!std::isfinite(g))
                throw TrainingError("adamw_step: non-finite gradient in parameter '" + p->name +
                                    "' at index " + std::to_string(i));
            p->m[i] = b1 * p->m[i] + (1.0 - b1) * g;
            p->v[i] = b2 * p->v[i] + (1.0 - b2) * g * g;
            const double mhat = p->m[i] / bc1;
            const double vhat = p->v[i] / bc2;
            p->value[i] -= lr * (mhat / (std::sqrt(vhat) + state.cfg.epsilon) +
                                 state.cfg.weight_decay * p->value[i]);
            if (!std::isfinite(p->value[i]))
                throw TrainingError("adamw_step: parameter '" + p->name +
                                    "' became non-finite at index " + std::to_string(i));
        }
    }
}

}  // namespace sbdot

#endif
