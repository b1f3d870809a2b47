#ifndef SBDOT_COVARIANCE_HPP
#define SBDOT_COVARIANCE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sbdot/core.hpp"

namespace sbdot {

/// Symmetric positive semi-definite operator with square-root action.
/// Three modes: identity, diagonal (given variances), dense (full matrix).
/// Dense factorization happens once at construction: Cholesky, falling back to
/// a symmetric eigendecomposition that clamps eigenvalues in
/// [-1e-10*lambda_max, 0) to zero and rejects anything below that.
/// Cheap to copy (shared immutable state); safe for concurrent reads.
class CovarianceOperator {
  public:
    enum class Mode { identity, diagonal, dense };

    static CovarianceOperator identity(std::size_t n) {
        auto impl = std::make_shared<Impl>();
        impl->mode = Mode::identity;
        impl->n = n;
        CovarianceOperator c;
        c.impl_ = std::move(impl);
        return c;
    }

    static CovarianceOperator diagonal(std::vector<double> variances) {
        for (double v : variances)
            if (v < 0.0 || !std::isfinite(v))
                throw ParameterError("diagonal covariance: variances must be finite and >= 0");
        auto impl = std::make_shared<Impl>();
        impl->mode = Mode::diagonal;
        impl->n = variances.size();
        impl->diag = std::move(variances);
        CovarianceOperator c;
        c.impl_ = std::move(impl);
        return c;
    }

    static CovarianceOperator dense(Eigen::MatrixXd C) {
        if (C.rows() != C.cols()) throw DimensionError("dense covariance: matrix not square");
        const double asym = (C - C.transpose()).cwiseAbs().maxCoeff();
        const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
        if (asym > 1e-12 * scale)
            throw NumericalError("dense covariance: matrix not symmetric (max asymmetry " +
                                 std::to_string(asym) + ")");
        auto impl = std::make_shared<Impl>();
        impl->mode = Mode::dense;
        impl->n = static_cast<std::size_t>(C.rows());
        impl->C = 0.5 * (C + C.transpose());
        impl->factorize();
        CovarianceOperator c;
        c.impl_ = std::move(impl);
        return c;
    }

    Mode mode() const { return impl_->mode; }
    std::size_t dim() const { return impl_->n; }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        check(v, "apply");
        switch (impl_->mode) {
            case Mode::identity: return v;
            case Mode::diagonal: {
                Eigen::VectorXd r(v.size());
                for (Eigen::Index i = 0; i < v.size(); ++i)
                    r[i] = impl_->diag[static_cast<std::size_t>(i)] * v[i];
                return r;
            }
            case Mode::dense: return impl_->C * v;
        }
        return v;
    }

    /// F v for a factor with F F^T = C.
    Eigen::VectorXd apply_sqrt(const Eigen::VectorXd& v) const {
        check(v, "apply_sqrt");
        switch (impl_->mode) {
            case Mode::identity: return v;
            case Mode::diagonal: {
                Eigen::VectorXd r(v.size());
                for (Eigen::Index i = 0; i < v.size(); ++i)
                    r[i] = std::sqrt(impl_->diag[static_cast<std::size_t>(i)]) * v[i];
                return r;
            }
            case Mode::dense: return impl_->sqrt_factor * v;
        }
        return v;
    }

    /// C^{-1} v. Throws NumericalError when C is (numerically) singular.
    Eigen::VectorXd solve(const Eigen::VectorXd& v) const {
        check(v, "solve");
        switch (impl_->mode) {
            case Mode::identity: return v;
            case Mode::diagonal: {
                Eigen::VectorXd r(v.size());
                for (Eigen::Index i = 0; i < v.size(); ++i) {
                    const double d = impl_->diag[static_cast<std::size_t>(i)];
                    if (d <= 0.0)
                        throw NumericalError("covariance solve: zero variance at index " +
                                             std::to_string(i));
                    r[i] = v[i] / d;
                }
                return r;
            }
            case Mode::dense: return impl_->solve(v);
        }
        return v;
    }

    /// G v for a factor with G G^T = C^{-1} (inverse transpose of the sqrt factor).
    Eigen::VectorXd apply_inv_sqrt(const Eigen::VectorXd& v) const {
        check(v, "apply_inv_sqrt");
        switch (impl_->mode) {
            case Mode::identity: return v;
            case Mode::diagonal: {
                Eigen::VectorXd r(v.size());
                for (Eigen::Index i = 0; i < v.size(); ++i) {
                    const double d = impl_->diag[static_cast<std::size_t>(i)];
                    if (d <= 0.0)
                        throw NumericalError("covariance inv sqrt: zero variance at index " +
                                             std::to_string(i));
                    r[i] = v[i] / std::sqrt(d);
                }
                return r;
            }
            case Mode::dense: return impl_->inv_sqrt(v);
        }
        return v;
    }

    Eigen::MatrixXd dense_matrix() const {
        switch (impl_->mode) {
            case Mode::identity:
                return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(impl_->n),
                                                 static_cast<Eigen::Index>(impl_->n));
            case Mode::diagonal: {
                Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(impl_->n),
                                                          static_cast<Eigen::Index>(impl_->n));
                for (std::size_t i = 0; i < impl_->n; ++i)
                    M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
                        impl_->diag[i];
                return M;
            }
            case Mode::dense: return impl_->C;
        }
        return {};
    }

    Eigen::MatrixXd sqrt_matrix() const {
        switch (impl_->mode) {
            case Mode::identity:
                return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(impl_->n),
                                                 static_cast<Eigen::Index>(impl_->n));
            case Mode::diagonal: {
                Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(impl_->n),
                                                          static_cast<Eigen::Index>(impl_->n));
                for (std::size_t i = 0; i < impl_->n; ++i)
                    M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
                        std::sqrt(impl_->diag[i]);
                return M;
            }
            case Mode::dense: return impl_->sqrt_factor;
        }
        return {};
    }

  private:
    struct Impl {
        Mode mode = Mode::identity;
        std::size_t n = 0;
        std::vector<double> diag;
        Eigen::MatrixXd C;
        Eigen::MatrixXd sqrt_factor;  // F with F F^T = C
        bool chol_ok = false;
        Eigen::LLT<Eigen::MatrixXd> llt;
        // eigen fallback
        Eigen::MatrixXd eigvec;
        Eigen::VectorXd eigval;  // clamped
        double eig_tol = 0.0;

        void factorize() {
            llt.compute(C);
            if (llt.info() == Eigen::Success) {
                chol_ok = true;
                sqrt_factor = llt.matrixL();
                return;
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
            if (es.info() != Eigen::Success)
                throw NumericalError("covariance factorization: eigendecomposition failed");
            eigval = es.eigenvalues();
            eigvec = es.eigenvectors();
            const double lmax = std::max(eigval.maxCoeff(), 0.0);
            const double floor = -1e-10 * std::max(lmax, 1e-300);
            if (eigval.minCoeff() < floor)
                throw NumericalError(
                    "covariance factorization: matrix indefinite, eigenvalues in [" +
                    std::to_string(eigval.minCoeff()) + ", " + std::to_string(lmax) + "]");
            for (Eigen::Index i = 0; i < eigval.size(); ++i)
                if (eigval[i] < 0.0) eigval[i] = 0.0;
            sqrt_factor = eigvec * eigval.cwiseSqrt().asDiagonal();
            eig_tol = lmax * 1e-14;
        }

        Eigen::VectorXd solve(const Eigen::VectorXd& v) const {
            if (chol_ok) return llt.solve(v);
            // pseudo-solve through the clamped eigendecomposition
            Eigen::VectorXd w = eigvec.transpose() * v;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                if (eigval[i] <= eig_tol)
                    throw NumericalError("covariance solve: singular direction, eigenvalue " +
                                         std::to_string(eigval[i]));
                w[i] /= eigval[i];
            }
            return eigvec * w;
        }

        Eigen::VectorXd inv_sqrt(const Eigen::VectorXd& v) const {
            if (chol_ok) {
                // L^{-T} v, with L L^T = C
                return llt.matrixU().solve(v);
            }
            Eigen::VectorXd w = eigvec.transpose() * v;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                if (eigval[i] <= eig_tol)
                    throw NumericalError("covariance inv sqrt: singular direction");
                w[i] /= std::sqrt(eigval[i]);
            }
            return eigvec * w;
        }
    };

    void check(const Eigen::VectorXd& v, const char* where) const {
        if (static_cast<std::size_t>(v.size()) != impl_->n)
            throw DimensionError(std::string(where) + ": vector length " +
                                 std::to_string(v.size()) + " != dim " + std::to_string(impl_->n));
    }

    std::shared_ptr<const Impl> impl_;
};

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> from_eigen(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace sbdot

#endif
