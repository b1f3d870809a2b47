#ifndef SBDOT_GAUSSIAN_HPP
#define SBDOT_GAUSSIAN_HPP

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <vector>

#include "sbdot/covariance.hpp"
#include "sbdot/core.hpp"
#include "sbdot/linear_operator.hpp"
#include "sbdot/rng.hpp"

namespace sbdot {

/// Exponential covariance sigma^2 exp(-||r_i - r_j|| / ell) over pixel centres
/// of a square grid. For multi-channel fields the channels are independent:
/// the matrix is block-diagonal with identical blocks.
inline CovarianceOperator ou_covariance(const Grid& grid, double sigma, double ell,
                                        std::size_t channels = 1) {
    if (!(sigma > 0.0) || !(ell > 0.0))
        throw ParameterError("ou_covariance: sigma and ell must be positive");
    const std::size_t n = grid.cells();
    Eigen::MatrixXd block(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        const double xa = grid.center_x(a % grid.n), ya = grid.center_y(a / grid.n);
        for (std::size_t b = a; b < n; ++b) {
            const double xb = grid.center_x(b % grid.n), yb = grid.center_y(b / grid.n);
            const double d = std::hypot(xa - xb, ya - yb);
            const double v = sigma * sigma * std::exp(-d / ell);
            block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
            block(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
        }
    }
    if (channels == 1) return CovarianceOperator::dense(block);
    const std::size_t N = channels * n;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N),
                                                 static_cast<Eigen::Index>(N));
    for (std::size_t c = 0; c < channels; ++c)
        full.block(static_cast<Eigen::Index>(c * n), static_cast<Eigen::Index>(c * n),
                   static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = block;
    return CovarianceOperator::dense(full);
}

/// mean + C^{1/2} z with z standard normal; deterministic given the stream.
inline Field sample_gaussian(const Field& mean, const CovarianceOperator& cov, RngStream& rng) {
    if (mean.size() != cov.dim())
        throw DimensionError("sample_gaussian: mean size does not match covariance dim");
    Eigen::VectorXd z(static_cast<Eigen::Index>(cov.dim()));
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    const Eigen::VectorXd s = cov.apply_sqrt(z);
    Field out = mean;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += s[static_cast<Eigen::Index>(i)];
    return out;
}

struct GaussianPosterior {
    Field mean;
    CovarianceOperator covariance;
};

/// Conjugate Gaussian update for y = A x + noise:
///   mean = m + S A^T (A S A^T + G_obs)^{-1} (y - A m)
///   cov  = S - S A^T (A S A^T + G_obs)^{-1} A S
inline GaussianPosterior analytic_posterior(const LinearOperator& A,
                                            const CovarianceOperator& gamma_obs,
                                            const Field& prior_mean,
                                            const CovarianceOperator& prior_cov,
                                            const std::vector<double>& y) {
    const std::size_t n = A.domain_shape().size();
    const std::size_t m = A.codomain_dim();
    if (prior_mean.size() != n || prior_cov.dim() != n)
        throw DimensionError("analytic_posterior: prior dimensions do not match operator domain");
    if (gamma_obs.dim() != m || y.size() != m)
        throw DimensionError("analytic_posterior: data dimensions do not match operator codomain");

    const Eigen::MatrixXd Ad = A.to_dense();
    const Eigen::MatrixXd S = prior_cov.dense_matrix();
    const Eigen::MatrixXd AS = Ad * S;
    Eigen::MatrixXd G = AS * Ad.transpose() + gamma_obs.dense_matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("analytic_posterior: Gram matrix factorization failed");
    const Eigen::VectorXd resid = to_eigen(y) - Ad * to_eigen(prior_mean.v);
    const Eigen::VectorXd mean =
        to_eigen(prior_mean.v) + AS.transpose() * ldlt.solve(resid);
    Eigen::MatrixXd cov = S - AS.transpose() * ldlt.solve(AS);
    cov = 0.5 * (cov + cov.transpose());

    GaussianPosterior post;
    post.mean = Field(prior_mean.shape, from_eigen(mean));
    post.covariance = CovarianceOperator::dense(cov);
    return post;
}

/// Posterior mean through the regularized normal equations
/// (A^T G^{-1} A + S^{-1}) x = A^T G^{-1} y + S^{-1} m.
/// Equivalent to the conjugate-update mean; kept as an independent route for
/// cross-checking. With m = 0 this is the usual Tikhonov minimizer.
inline Field tikhonov_mean(const LinearOperator& A, const CovarianceOperator& gamma_obs,
                           const Field& prior_mean, const CovarianceOperator& prior_cov,
                           const std::vector<double>& y) {
    const Eigen::MatrixXd Ad = A.to_dense();
    const Eigen::MatrixXd Ginv_A = [&] {
        Eigen::MatrixXd M(Ad.rows(), Ad.cols());
        for (Eigen::Index j = 0; j < Ad.cols(); ++j) M.col(j) = gamma_obs.solve(Ad.col(j));
        return M;
    }();
    const Eigen::MatrixXd Sinv = [&] {
        const std::size_t n = prior_cov.dim();
        Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) {
            e[static_cast<Eigen::Index>(j)] = 1.0;
            M.col(static_cast<Eigen::Index>(j)) = prior_cov.solve(e);
            e[static_cast<Eigen::Index>(j)] = 0.0;
        }
        return M;
    }();
    Eigen::MatrixXd H = Ad.transpose() * Ginv_A + Sinv;
    Eigen::VectorXd rhs =
        Ginv_A.transpose() * to_eigen(y) + Sinv * to_eigen(prior_mean.v);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("tikhonov_mean: normal equations factorization failed");
    return Field(prior_mean.shape, from_eigen(ldlt.solve(rhs)));
}

/// Score of the diffused Gaussian posterior at effective time tau:
///   s(x, tau) = C ((1 - e^{-tau}) C + e^{-tau} Gpost)^{-1} (e^{-tau/2} mean - x).
inline Field gaussian_posterior_score(const GaussianPosterior& post, const CovarianceOperator& C,
                                      const Field& x, double tau) {
    if (!(tau > 0.0)) throw ParameterError("gaussian_posterior_score: tau must be positive");
    check_same_shape(post.mean, x, "gaussian_posterior_score");
    const double a = 1.0 - std::exp(-tau);
    const double b = std::exp(-tau);
    Eigen::MatrixXd M = a * C.dense_matrix() + b * post.covariance.dense_matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("gaussian_posterior_score: system factorization failed");
    const Eigen::VectorXd rhs =
        std::exp(-tau / 2.0) * to_eigen(post.mean.v) - to_eigen(x.v);
    const Eigen::VectorXd s = C.apply(ldlt.solve(rhs));
    return Field(x.shape, from_eigen(s));
}

/// Same score as gaussian_posterior_score but with the per-tau solve reduced
/// to O(n^2) through one generalized eigendecomposition at construction:
/// with C = L L^T and L^{-1} Gpost L^{-T} = Q D Q^T,
///   s(x, tau) = L Q (a I + b D)^{-1} Q^T L^{-1} (e^{-tau/2} mean - x).
/// Used inside samplers, where the score is evaluated at 500 time points.
class GaussianScoreModel {
  public:
    GaussianScoreModel(const GaussianPosterior& post, const CovarianceOperator& C)
        : shape_(post.mean.shape), mean_(to_eigen(post.mean.v)) {
        const Eigen::Index n = mean_.size();
        Eigen::LLT<Eigen::MatrixXd> llt(C.dense_matrix());
        if (llt.info() != Eigen::Success)
            throw NumericalError("GaussianScoreModel: diffusion covariance not positive definite");
        L_ = llt.matrixL();
        Eigen::MatrixXd G = post.covariance.dense_matrix();
        Eigen::MatrixXd W = L_.triangularView<Eigen::Lower>().solve(G);
        W = L_.triangularView<Eigen::Lower>().solve(W.transpose()).eval();
        W = 0.5 * (W + W.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W);
        if (es.info() != Eigen::Success)
            throw NumericalError("GaussianScoreModel: eigendecomposition failed");
        Q_ = es.eigenvectors();
        d_ = es.eigenvalues().cwiseMax(0.0);
        LQ_ = L_ * Q_;
        (void)n;
    }

    Field operator()(const Field& x, double tau) const {
        Eigen::VectorXd r = evaluate(to_eigen(x.v), tau);
        return Field(shape_, from_eigen(r));
    }

    Eigen::VectorXd evaluate(const Eigen::VectorXd& x, double tau) const {
        const double a = 1.0 - std::exp(-tau);
        const double b = std::exp(-tau);
        Eigen::VectorXd rhs = std::exp(-tau / 2.0) * mean_ - x;
        Eigen::VectorXd w = Q_.transpose() * L_.triangularView<Eigen::Lower>().solve(rhs);
        for (Eigen::Index i = 0; i < w.size(); ++i) w[i] /= (a + b * d_[i]);
        return LQ_ * w;
    }

    /// Batched evaluation: columns of X are states.
    Eigen::MatrixXd evaluate(const Eigen::MatrixXd& X, double tau) const {
        const double a = 1.0 - std::exp(-tau);
        const double b = std::exp(-tau);
        Eigen::MatrixXd rhs = (std::exp(-tau / 2.0) * mean_).replicate(1, X.cols()) - X;
        Eigen::MatrixXd w = Q_.transpose() * L_.triangularView<Eigen::Lower>().solve(rhs);
        for (Eigen::Index i = 0; i < w.rows(); ++i) w.row(i) /= (a + b * d_[i]);
        return LQ_ * w;
    }

    const FieldShape& shape() const { return shape_; }

  private:
    FieldShape shape_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd L_, Q_, LQ_;
    Eigen::VectorXd d_;
};

}  // namespace sbdot

#endif
