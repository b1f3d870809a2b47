#ifndef SBDOT_SDE_HPP
#define SBDOT_SDE_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sbdot/covariance.hpp"
#include "sbdot/core.hpp"
#include "sbdot/gaussian.hpp"
#include "sbdot/rng.hpp"
#include "sbdot/schedule.hpp"

namespace sbdot {

/// Score evaluated at a state and a raw schedule time t in [t_min, t_max].
/// The convention throughout is the C-preconditioned score s = C grad log q,
/// where q is the diffused density at effective time tau(t).
using ScoreFn = std::function<Field(const Field&, double)>;

/// Batched variant used by samplers so network scores can amortize over chains.
using BatchScoreFn = std::function<std::vector<Field>(const std::vector<Field>&, double)>;

inline BatchScoreFn batch_from_single(ScoreFn f) {
    return [f = std::move(f)](const std::vector<Field>& xs, double t) {
        std::vector<Field> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(f(x, t));
        return out;
    };
}

/// Posterior-mean denoiser at effective time tau:
/// E[X0 | X_t = x] = e^{tau/2} (x + (1 - e^{-tau}) s(x, tau)),
/// with s the C-preconditioned score of the diffused law. The score callback
/// receives tau directly.
inline Field tweedie_denoiser(const std::function<Field(const Field&, double)>& score_at_tau,
                              const Field& x, double tau) {
    if (!(tau > 0.0)) throw ParameterError("tweedie_denoiser: tau must be positive");
    const auto [mean_scale, noise_var] = perturbation_params(tau);
    Field s = score_at_tau(x, tau);
    check_same_shape(x, s, "tweedie_denoiser");
    Field out = x;
    const double lift = 1.0 / mean_scale;  // e^{tau/2}
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = lift * (x.v[i] + noise_var * s.v[i]);
    return out;
}

namespace detail {

inline void check_chain_state(const std::vector<double>& v, std::size_t step) {
    for (double x : v)
        if (!std::isfinite(x)) throw DivergenceError("reverse SDE chain diverged", step);
}

}  // namespace detail

/// Reverse-time Euler-Maruyama sampler for the variance-preserving SDE.
/// Starts at Y ~ N(0, C) at t = t_max and steps the forward-time coordinate
/// down to t_min on a uniform grid with n_steps updates:
///   Y <- Y + (Y/2 + s(Y, t)) beta(t) dt + sqrt(beta(t) dt) C^{1/2} z.
/// Deterministic given the stream (one init draw, then one noise draw per step).
inline Field reverse_em_sample(const ScoreFn& score, const CovarianceOperator& C,
                               const DiffusionSchedule& sched, RngStream& rng, FieldShape shape) {
    sched.validate();
    if (shape.size() != C.dim())
        throw DimensionError("reverse_em_sample: shape does not match covariance dim");
    Field y(shape);
    {
        Eigen::VectorXd z(static_cast<Eigen::Index>(C.dim()));
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        y.v = from_eigen(C.apply_sqrt(z));
    }
    const double dt = sched.step();
    for (std::size_t k = 0; k < sched.n_steps; ++k) {
        const double t = sched.t_max - static_cast<double>(k) * dt;
        const double b = sched.beta(t);
        Field s = score(y, t);
        check_same_shape(y, s, "reverse_em_sample score");
        Eigen::VectorXd z(static_cast<Eigen::Index>(C.dim()));
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        const Eigen::VectorXd noise = std::sqrt(b * dt) * C.apply_sqrt(z);
        for (std::size_t i = 0; i < y.size(); ++i)
            y.v[i] += (0.5 * y.v[i] + s.v[i]) * b * dt + noise[static_cast<Eigen::Index>(i)];
        detail::check_chain_state(y.v, k);
    }
    return y;
}

struct EnsembleResult {
    std::vector<Field> samples;          // successful chains, in chain order
    std::vector<std::size_t> chain_ids;  // originating chain index per sample
    std::vector<std::string> failures;   // messages for diverged chains
};

/// Runs n_chains reverse chains with streams derive_stream(master_seed, chain).
/// Chains are stepped in lockstep so the batched score can vectorize; a chain
/// that diverges is dropped and reported without affecting the others.
inline EnsembleResult reverse_em_ensemble(const BatchScoreFn& score, const CovarianceOperator& C,
                                          const DiffusionSchedule& sched, std::size_t n_chains,
                                          std::uint64_t master_seed, FieldShape shape) {
    sched.validate();
    if (shape.size() != C.dim())
        throw DimensionError("reverse_em_ensemble: shape does not match covariance dim");

    std::vector<RngStream> streams;
    streams.reserve(n_chains);
    std::vector<Field> state;
    std::vector<std::size_t> ids(n_chains);
    std::vector<bool> alive(n_chains, true);
    EnsembleResult result;
    for (std::size_t c = 0; c < n_chains; ++c) {
        streams.push_back(derive_stream(master_seed, c));
        Eigen::VectorXd z(static_cast<Eigen::Index>(C.dim()));
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = streams.back().normal();
        state.emplace_back(shape, from_eigen(C.apply_sqrt(z)));
        ids[c] = c;
    }

    const double dt = sched.step();
    for (std::size_t k = 0; k < sched.n_steps; ++k) {
        const double t = sched.t_max - static_cast<double>(k) * dt;
        const double b = sched.beta(t);
        std::vector<Field> scores = score(state, t);
        if (scores.size() != state.size())
            throw DimensionError("reverse_em_ensemble: batched score returned wrong count");
        std::vector<Field> next;
        std::vector<std::size_t> next_ids;
        std::vector<RngStream> next_streams;
        next.reserve(state.size());
        for (std::size_t c = 0; c < state.size(); ++c) {
            Field& y = state[c];
            Eigen::VectorXd z(static_cast<Eigen::Index>(C.dim()));
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = streams[c].normal();
            const Eigen::VectorXd noise = std::sqrt(b * dt) * C.apply_sqrt(z);
            bool ok = true;
            for (std::size_t i = 0; i < y.size(); ++i) {
                y.v[i] += (0.5 * y.v[i] + scores[c].v[i]) * b * dt +
                          noise[static_cast<Eigen::Index>(i)];
                if (!std::isfinite(y.v[i])) ok = false;
            }
            if (ok) {
                next.push_back(std::move(y));
                next_ids.push_back(ids[c]);
                next_streams.push_back(std::move(streams[c]));
            } else {
                alive[ids[c]] = false;
                result.failures.push_back("chain " + std::to_string(ids[c]) +
                                          " diverged at step " + std::to_string(k));
            }
        }
        state = std::move(next);
        ids = std::move(next_ids);
        streams = std::move(next_streams);
        if (state.empty()) break;
    }
    result.samples = std::move(state);
    result.chain_ids = std::move(ids);
    return result;
}

}  // namespace sbdot

#endif
