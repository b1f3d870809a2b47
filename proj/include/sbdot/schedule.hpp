#ifndef SBDOT_SCHEDULE_HPP
#define SBDOT_SCHEDULE_HPP

#include <cmath>
#include <cstddef>
#include <utility>

#include "sbdot/core.hpp"

namespace sbdot {

/// Variance-preserving diffusion schedule with a linear time change
/// beta(t) = beta0 + t (beta1 - beta0). All closed-form quantities are
/// evaluated at the effective time tau(t) = int_0^t beta(s) ds.
struct DiffusionSchedule {
    double t_min = 0.005;  // truncation
    double t_max = 1.0;    // horizon
    std::size_t n_steps = 500;
    double beta0 = 0.05;
    double beta1 = 10.0;

    void validate() const {
        if (!(0.0 < t_min && t_min < t_max))
            throw ParameterError("schedule: need 0 < t_min < t_max");
        if (n_steps < 1) throw ParameterError("schedule: need n_steps >= 1");
        if (!(beta0 > 0.0 && beta1 > 0.0))
            throw ParameterError("schedule: need positive beta endpoints");
    }

    double beta(double t) const { return beta0 + t * (beta1 - beta0); }

    double effective_time(double t) const {
        if (t < 0.0 || t > t_max)
            throw ParameterError("effective_time: t outside [0, t_max]");
        return beta0 * t + 0.5 * (beta1 - beta0) * t * t;
    }

    double step() const { return (t_max - t_min) / static_cast<double>(n_steps); }
};

/// Parameters of the perturbation kernel at effective time tau:
/// the conditional law of the diffused state is N(e^{-tau/2} x0, (1-e^{-tau}) C).
/// Returns (mean_scale, noise_variance_scale) = (e^{-tau/2}, 1 - e^{-tau}).
inline std::pair<double, double> perturbation_params(double tau) {
    if (tau < 0.0) throw ParameterError("perturbation_params: tau must be >= 0");
    return {std::exp(-tau / 2.0), 1.0 - std::exp(-tau)};
}

}  // namespace sbdot

#endif
