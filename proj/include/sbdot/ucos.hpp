#ifndef SBDOT_UCOS_HPP
#define SBDOT_UCOS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "sbdot/covariance.hpp"
#include "sbdot/core.hpp"
#include "sbdot/ensemble.hpp"
#include "sbdot/gaussian.hpp"
#include "sbdot/linear_operator.hpp"
#include "sbdot/nn/optimizer.hpp"
#include "sbdot/nn/score_network.hpp"
#include "sbdot/rng.hpp"
#include "sbdot/schedule.hpp"
#include "sbdot/sde.hpp"

namespace sbdot {

/// Everything the training- and sampling-side closed forms need: forward map,
/// diffusion covariance, observation covariance, schedule. Measurement data
/// enters only at sampling time.
struct UcosProblem {
    std::shared_ptr<const LinearOperator> A;
    CovarianceOperator C;
    CovarianceOperator gamma_obs;
    DiffusionSchedule sched;

    void validate() const {
        if (!A) throw ParameterError("UcosProblem: missing operator");
        if (C.dim() != A->domain_shape().size())
            throw DimensionError("UcosProblem: diffusion covariance dim != operator domain");
        if (gamma_obs.dim() != A->codomain_dim())
            throw DimensionError("UcosProblem: observation covariance dim != operator codomain");
        sched.validate();
    }

    FieldShape field_shape() const { return A->domain_shape(); }
};

/// lambda(tau) = 1 / (e^{tau/2} - e^{-tau/2}).
inline double lambda_coeff(double tau) {
    if (!(tau > 0.0)) throw ParameterError("lambda_coeff: tau must be positive");
    return 1.0 / (std::exp(tau / 2.0) - std::exp(-tau / 2.0));
}

/// Data-dependent part of the score input, gamma = C A* Gobs^{-1} y.
/// Computed once per sampling run.
inline Field precompute_data_term(const UcosProblem& prob, const std::vector<double>& y) {
    prob.validate();
    if (y.size() != prob.A->codomain_dim())
        throw DimensionError("precompute_data_term: data length mismatch");
    const Eigen::VectorXd w = prob.gamma_obs.solve(to_eigen(y));
    Field aw = prob.A->apply_adjoint(from_eigen(w));
    return Field(aw.shape, from_eigen(prob.C.apply(to_eigen(aw.v))));
}

/// xi_tau(x) = gamma + lambda(tau) x, the affine input handed to r.
inline Field ucos_input(const Field& gamma, const Field& x, double tau) {
    check_same_shape(gamma, x, "ucos_input");
    const double lam = lambda_coeff(tau);
    Field xi = gamma;
    for (std::size_t i = 0; i < xi.size(); ++i) xi.v[i] += lam * x.v[i];
    return xi;
}

/// One training input draw, matrix-free:
///   u = ((e^tau - 1)^{-1} I + C A* Gobs^{-1} A) x0
///       + (e^tau - 1)^{-1/2} C^{1/2} z1 + C A* Gobs^{-1/2} z2,
/// with z1 (n draws) taken from the stream before z2 (m draws).
inline Field sample_training_input(const UcosProblem& prob, const Field& x0, double tau,
                                   RngStream& rng) {
    if (!(tau > 0.0)) throw ParameterError("sample_training_input: tau must be positive");
    if (!(x0.shape == prob.A->domain_shape()))
        throw DimensionError("sample_training_input: field shape mismatch");
    const double et1 = std::expm1(tau);  // e^tau - 1
    const std::size_t n = x0.size();
    const std::size_t m = prob.A->codomain_dim();

    Eigen::VectorXd u = to_eigen(x0.v) / et1;
    {
        const auto ax = prob.A->apply(x0);
        Field atw = prob.A->apply_adjoint(from_eigen(prob.gamma_obs.solve(to_eigen(ax))));
        u += prob.C.apply(to_eigen(atw.v));
    }
    {
        Eigen::VectorXd z1(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < z1.size(); ++i) z1[i] = rng.normal();
        u += prob.C.apply_sqrt(z1) / std::sqrt(et1);
    }
    {
        Eigen::VectorXd z2(static_cast<Eigen::Index>(m));
        for (Eigen::Index i = 0; i < z2.size(); ++i) z2[i] = rng.normal();
        Field atz = prob.A->apply_adjoint(from_eigen(prob.gamma_obs.apply_inv_sqrt(z2)));
        u += prob.C.apply(to_eigen(atz.v));
    }
    return Field(x0.shape, from_eigen(u));
}

// ---------------------------------------------------------------------------
// Dense small-instance builders for the auxiliary-process matrices. Used by
// the Gaussian oracle, the verification suites, and nothing on the hot path.
// ---------------------------------------------------------------------------

/// C_tau = (e^tau - 1) A C A* + Gobs.
inline Eigen::MatrixXd ucos_c_matrix(const UcosProblem& prob, double tau) {
    const Eigen::MatrixXd Ad = prob.A->to_dense();
    return std::expm1(tau) * (Ad * prob.C.dense_matrix() * Ad.transpose()) +
           prob.gamma_obs.dense_matrix();
}

/// Sigma_tau = (e^tau - 1) C - (e^tau - 1)^2 C A* C_tau^{-1} A C.
inline Eigen::MatrixXd ucos_sigma_matrix(const UcosProblem& prob, double tau) {
    const double et1 = std::expm1(tau);
    const Eigen::MatrixXd Ad = prob.A->to_dense();
    const Eigen::MatrixXd Cd = prob.C.dense_matrix();
    const Eigen::MatrixXd CAt = Cd * Ad.transpose();
    const Eigen::MatrixXd Ct = ucos_c_matrix(prob, tau);
    Eigen::MatrixXd Sig = et1 * Cd - et1 * et1 * (CAt * Ct.ldlt().solve(CAt.transpose()));
    return 0.5 * (Sig + Sig.transpose());
}

/// R_tau^{-1} = (e^tau - 1)^{-1} I + C A* Gobs^{-1} A.
inline Eigen::MatrixXd ucos_r_inverse_matrix(const UcosProblem& prob, double tau) {
    const double et1 = std::expm1(tau);
    const Eigen::MatrixXd Ad = prob.A->to_dense();
    const std::size_t n = prob.A->domain_shape().size();
    Eigen::MatrixXd GinvA(Ad.rows(), Ad.cols());
    for (Eigen::Index j = 0; j < Ad.cols(); ++j) GinvA.col(j) = prob.gamma_obs.solve(Ad.col(j));
    return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                     static_cast<Eigen::Index>(n)) /
               et1 +
           prob.C.dense_matrix() * Ad.transpose() * GinvA;
}

inline Eigen::MatrixXd ucos_r_matrix(const UcosProblem& prob, double tau) {
    const Eigen::MatrixXd Rinv = ucos_r_inverse_matrix(prob, tau);
    return Rinv.partialPivLu().inverse();
}

/// Smallest eigenvalue of Sigma_tau (the auxiliary noise covariance); the
/// framework asserts positivity, this lets callers check it numerically.
inline double ucos_sigma_min_eigenvalue(const UcosProblem& prob, double tau) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ucos_sigma_matrix(prob, tau));
    if (es.info() != Eigen::Success)
        throw NumericalError("ucos_sigma_min_eigenvalue: eigendecomposition failed");
    return es.eigenvalues().minCoeff();
}

/// Map (eta, raw t) -> r value. Either a trained network (batched) or the
/// Gaussian closed form below.
using RMap = std::function<std::vector<Field>(const std::vector<Field>&, double)>;

inline RMap rmap_from_network(ScoreNetwork& net) {
    return [&net](const std::vector<Field>& xs, double t_raw) { return net.eval(xs, t_raw); };
}

/// Closed-form r for a Gaussian prior N(m, S):
///   r(eta, tau) = m + S (S + Sigma_tau)^{-1} (R_tau eta - m),
/// the conditional mean of the clean field given the auxiliary state R_tau eta.
/// Dense small-instance algebra; the central verification oracle.
class GaussianOracleR {
  public:
    GaussianOracleR(const UcosProblem& prob, Field prior_mean, const CovarianceOperator& prior_cov)
        : prob_(prob), mean_(std::move(prior_mean)), S_(prior_cov.dense_matrix()) {
        prob_.validate();
        if (mean_.size() != prob_.A->domain_shape().size())
            throw DimensionError("GaussianOracleR: prior mean shape mismatch");
    }

    Field operator()(const Field& eta, double tau) const {
        const Eigen::MatrixXd Sig = ucos_sigma_matrix(prob_, tau);
        const Eigen::MatrixXd R = ucos_r_matrix(prob_, tau);
        const Eigen::VectorXd z = R * to_eigen(eta.v) - to_eigen(mean_.v);
        const Eigen::VectorXd r = to_eigen(mean_.v) + S_ * Eigen::MatrixXd(S_ + Sig).ldlt().solve(z);
        return Field(eta.shape, from_eigen(r));
    }

    /// Adapter with the RMap signature: converts raw t to effective time.
    RMap as_rmap() const {
        return [this](const std::vector<Field>& xs, double t_raw) {
            const double tau = prob_.sched.effective_time(t_raw);
            std::vector<Field> out;
            out.reserve(xs.size());
            for (const auto& x : xs) out.push_back((*this)(x, tau));
            return out;
        };
    }

  private:
    UcosProblem prob_;
    Field mean_;
    Eigen::MatrixXd S_;
};

/// Conditional score through the unconditional representation:
///   s(x, t) = lambda(tau) ( r(xi_tau(x), t) - e^{tau/2} x ),  tau = tau(t).
/// r receives the raw schedule time; all coefficients use effective time.
inline Field conditional_score(const UcosProblem& prob, const RMap& r, const Field& gamma,
                               const Field& x, double t_raw) {
    const double tau = prob.sched.effective_time(t_raw);
    const double lam = lambda_coeff(tau);
    const Field xi = ucos_input(gamma, x, tau);
    Field rv = r({xi}, t_raw)[0];
    check_same_shape(x, rv, "conditional_score");
    const double lift = std::exp(tau / 2.0);
    Field s(x.shape);
    for (std::size_t i = 0; i < s.size(); ++i) s.v[i] = lam * (rv.v[i] - lift * x.v[i]);
    return s;
}

/// Convex combination of a data-driven and a model-based score.
inline Field regularized_score(const Field& s_data, const Field& s_gauss, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ParameterError("regularized_score: alpha must lie in [0, 1]");
    check_same_shape(s_data, s_gauss, "regularized_score");
    Field out(s_data.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.v[i] = (1.0 - alpha) * s_data.v[i] + alpha * s_gauss.v[i];
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double t_truncation = 0.001;  // training-time lower bound on t
    std::uint64_t seed = 0;
    AdamWConfig optimizer;
    // Weighting of the regression residual. The lambda(tau)^2 factor of the
    // score-matching objective does not change the minimizer (the conditional
    // mean); the minimization step runs on the unweighted residual by default,
    // which is what converges at the eps = 0.001 truncation. Set true to train
    // on the lambda^2-weighted objective instead.
    bool lambda_weighted = false;

    void validate() const {
        if (epochs < 1) throw ParameterError("TrainingConfig: epochs >= 1 required");
        if (batch_size < 1) throw ParameterError("TrainingConfig: batch_size >= 1 required");
        if (!(t_truncation > 0.0 && t_truncation < 1.0))
            throw ParameterError("TrainingConfig: truncation must lie in (0, 1)");
    }
};

/// DSM weight at effective time tau. Exposed separately so the weighting can
/// be ablated (unit weights give the plain mean-squared objective).
inline double dsm_weight(double tau) {
    const double lam = lambda_coeff(tau);
    return lam * lam;
}

struct TrainResult {
    std::vector<double> epoch_loss;  // mean weighted loss per epoch
};

namespace detail_ucos {

struct TrainBatch {
    std::vector<double> inputs;   // [B, C, H, W]
    std::vector<double> targets;  // same layout
    std::vector<double> weights;  // [B]
    std::vector<double> times;    // [B] raw t
};

inline TrainBatch make_training_batch(const UcosProblem& prob, const std::vector<Field>& dataset,
                                      const std::vector<std::size_t>& idx, double t_truncation,
                                      RngStream& rng, bool unit_weights) {
    TrainBatch b;
    const std::size_t n = prob.A->domain_shape().size();
    b.inputs.reserve(idx.size() * n);
    b.targets.reserve(idx.size() * n);
    for (std::size_t j : idx) {
        const Field& x0 = dataset[j];
        const double t = rng.uniform(t_truncation, 1.0);
        const double tau = prob.sched.effective_time(t);
        Field u = sample_training_input(prob, x0, tau, rng);
        b.inputs.insert(b.inputs.end(), u.v.begin(), u.v.end());
        b.targets.insert(b.targets.end(), x0.v.begin(), x0.v.end());
        b.weights.push_back(unit_weights ? 1.0 : dsm_weight(tau));
        b.times.push_back(t);
    }
    return b;
}

using BatchBuilder =
    std::function<TrainBatch(const std::vector<std::size_t>& idx, RngStream& rng)>;

/// Shared epoch/batch loop: shuffle, build batches, regress, AdamW step.
inline std::vector<double> train_loop(ScoreNetwork& net, std::size_t n_items, std::size_t epochs,
                                      std::size_t batch_size, std::uint64_t seed,
                                      const AdamWConfig& opt_cfg, const BatchBuilder& build) {
    RngStream rng(seed);
    OptimizerState opt{opt_cfg};
    std::vector<double> trace;
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        const double frac =
            epochs == 1 ? 0.0 : static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            TrainBatch batch = build(idx, rng);
            ad::Tape tape;
            const int x = tape.input(net.batch_shape(idx.size()), std::move(batch.inputs));
            const int out = net.forward(tape, x, batch.times);
            const int loss = ad::weighted_mse(tape, out, batch.targets, batch.weights);
            const double lv = tape.value(loss)[0];
            if (!std::isfinite(lv)) throw TrainingError("train: loss diverged (non-finite)");
            net.zero_grad();
            tape.backward(loss);
            adamw_step(opt, net.parameters(), frac);
            epoch_loss += lv;
            ++n_batches;
        }
        trace.push_back(epoch_loss / static_cast<double>(n_batches));
    }
    return trace;
}

}  // namespace detail_ucos

/// Denoising-score-matching training loop: sample a clean field and a time,
/// draw the auxiliary input, regress the clean field under the lambda^2
/// weighting, step AdamW with the linearly decaying rate. Single-threaded and
/// deterministic for a fixed seed.
inline TrainResult train(const UcosProblem& prob, const std::vector<Field>& dataset,
                         ScoreNetwork& net, const TrainingConfig& cfg) {
    prob.validate();
    cfg.validate();
    if (dataset.empty()) throw TrainingError("train: dataset is empty");
    for (const auto& f : dataset)
        if (!(f.shape == prob.A->domain_shape()))
            throw DimensionError("train: dataset field shape does not match operator domain");
    if (!(net.field_shape() == prob.A->domain_shape()))
        throw DimensionError("train: network shape does not match operator domain");

    TrainResult result;
    result.epoch_loss = detail_ucos::train_loop(
        net, dataset.size(), cfg.epochs, cfg.batch_size, cfg.seed, cfg.optimizer,
        [&](const std::vector<std::size_t>& idx, RngStream& rng) {
            return detail_ucos::make_training_batch(prob, dataset, idx, cfg.t_truncation, rng,
                                                    /*unit_weights=*/!cfg.lambda_weighted);
        });
    return result;
}

// ---------------------------------------------------------------------------
// Posterior sampling
// ---------------------------------------------------------------------------

struct GaussianPrior {
    Field mean;
    CovarianceOperator cov;
};

struct SampleOptions {
    double alpha = 0.0;
    std::size_t n_samples = 100;
    std::uint64_t master_seed = 0;
};

/// Reverse Euler-Maruyama with the (optionally regularized) conditional score.
/// gamma is precomputed once; with alpha > 0 the analytic Gaussian posterior of
/// `reg_prior` supplies the model-based score. Chains run in lockstep with
/// per-chain streams; diverged chains are reported, others are unaffected.
inline SampleEnsemble sample_posterior(const UcosProblem& prob, const std::vector<double>& y,
                                       const RMap& r, const SampleOptions& opts,
                                       const GaussianPrior* reg_prior = nullptr) {
    prob.validate();
    if (opts.n_samples < 1) throw ParameterError("sample_posterior: n_samples >= 1");
    if (opts.alpha < 0.0 || opts.alpha > 1.0)
        throw ParameterError("sample_posterior: alpha must lie in [0, 1]");
    if (opts.alpha > 0.0 && reg_prior == nullptr)
        throw ParameterError("sample_posterior: alpha > 0 requires the Gaussian prior");

    const Field gamma = precompute_data_term(prob, y);
    std::unique_ptr<GaussianScoreModel> gauss;
    if (opts.alpha > 0.0) {
        GaussianPosterior post =
            analytic_posterior(*prob.A, prob.gamma_obs, reg_prior->mean, reg_prior->cov, y);
        gauss = std::make_unique<GaussianScoreModel>(post, prob.C);
    }

    BatchScoreFn score = [&](const std::vector<Field>& xs, double t_raw) {
        const double tau = prob.sched.effective_time(t_raw);
        const double lam = lambda_coeff(tau);
        const double lift = std::exp(tau / 2.0);
        std::vector<Field> out(xs.size(), Field(xs.empty() ? FieldShape{} : xs[0].shape));
        if (opts.alpha < 1.0) {
            std::vector<Field> xis;
            xis.reserve(xs.size());
            for (const auto& x : xs) xis.push_back(ucos_input(gamma, x, tau));
            std::vector<Field> rv = r(xis, t_raw);
            for (std::size_t c = 0; c < xs.size(); ++c) {
                Field& s = out[c];
                for (std::size_t i = 0; i < s.size(); ++i)
                    s.v[i] = (1.0 - opts.alpha) * lam * (rv[c].v[i] - lift * xs[c].v[i]);
            }
        }
        if (opts.alpha > 0.0) {
            for (std::size_t c = 0; c < xs.size(); ++c) {
                const Eigen::VectorXd sg = gauss->evaluate(to_eigen(xs[c].v), tau);
                for (std::size_t i = 0; i < out[c].size(); ++i)
                    out[c].v[i] += opts.alpha * sg[static_cast<Eigen::Index>(i)];
            }
        }
        return out;
    };

    EnsembleResult res = reverse_em_ensemble(score, prob.C, prob.sched, opts.n_samples,
                                             opts.master_seed, prob.field_shape());
    SampleEnsemble ens;
    ens.samples = std::move(res.samples);
    ens.failures = std::move(res.failures);
    ens.method = opts.alpha == 0.0 ? "ucos" : "ucos-reg";
    ens.master_seed = opts.master_seed;
    if (ens.samples.empty())
        throw NumericalError("sample_posterior: every chain diverged");
    return ens;
}

}  // namespace sbdot

#endif
