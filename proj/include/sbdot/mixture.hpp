#ifndef SBDOT_MIXTURE_HPP
#define SBDOT_MIXTURE_HPP

#include <cmath>
#include <vector>

#include "sbdot/core.hpp"

namespace sbdot {

/// One-dimensional Gaussian, used by the small-time rate harness below.
struct Gaussian1D {
    double mean = 0.0;
    double var = 1.0;
};

/// Law of the VP-diffused Gaussian at kernel time t:
/// N(mean, var) convolved with the kernel N(e^{-t/2} z, 1 - e^{-t}).
inline Gaussian1D diffuse_gaussian1d(const Gaussian1D& g, double t) {
    const double ms = std::exp(-t / 2.0);
    return {ms * g.mean, ms * ms * g.var + 1.0 - std::exp(-t)};
}

inline double gaussian1d_score(const Gaussian1D& g, double x) {
    return (g.mean - x) / g.var;
}

/// Unnormalized geometric mixture p1^alpha p2^{1-alpha} of two 1D Gaussians is
/// again an (unnormalized) Gaussian; precision and mean combine convexly.
inline Gaussian1D geometric_mixture1d(const Gaussian1D& p1, const Gaussian1D& p2, double alpha) {
    const double prec = alpha / p1.var + (1.0 - alpha) / p2.var;
    const double mean = (alpha * p1.mean / p1.var + (1.0 - alpha) * p2.mean / p2.var) / prec;
    return {mean, 1.0 / prec};
}

struct MixtureRateEntry {
    double t = 0.0;
    double error = 0.0;
};

/// Closed-form check of the small-time behaviour of the convex score
/// combination: at point x and each kernel time t, the absolute difference
/// between alpha * score(p1 * k_t) + (1-alpha) * score(p2 * k_t) and the score
/// of (geometric mixture) * k_t. All three convolutions are Gaussian, so the
/// error is exact up to floating point. The error decays linearly as t -> 0.
inline std::vector<MixtureRateEntry> mixture_rate_check(const Gaussian1D& p1, const Gaussian1D& p2,
                                                        double alpha, double x,
                                                        const std::vector<double>& t_list) {
    if (!(alpha > 0.0 && alpha < 1.0) && alpha != 0.0 && alpha != 1.0)
        throw ParameterError("mixture_rate_check: alpha must lie in [0, 1]");
    if (!(p1.var > 0.0) || !(p2.var > 0.0))
        throw ParameterError("mixture_rate_check: degenerate Gaussian");
    const Gaussian1D q = geometric_mixture1d(p1, p2, alpha);
    std::vector<MixtureRateEntry> out;
    out.reserve(t_list.size());
    for (double t : t_list) {
        const double s1 = gaussian1d_score(diffuse_gaussian1d(p1, t), x);
        const double s2 = gaussian1d_score(diffuse_gaussian1d(p2, t), x);
        const double sq = gaussian1d_score(diffuse_gaussian1d(q, t), x);
        out.push_back({t, std::abs(alpha * s1 + (1.0 - alpha) * s2 - sq)});
    }
    return out;
}

}  // namespace sbdot

#endif
