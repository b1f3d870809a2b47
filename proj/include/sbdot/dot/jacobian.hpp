#ifndef SBDOT_DOT_JACOBIAN_HPP
#define SBDOT_DOT_JACOBIAN_HPP

#include <memory>
#include <vector>

#include "sbdot/dot/forward.hpp"
#include "sbdot/linear_operator.hpp"

namespace sbdot::dotfwd {

struct DotJacobian {
    std::shared_ptr<DenseMatrixOperator> j_mua;
    std::shared_ptr<DenseMatrixOperator> j_mus;
};

/// Frechet derivative of the measurement map at the given background, by the
/// adjoint method: one forward solve per source, one adjoint solve per
/// detector (the system is complex symmetric, so the adjoint solve reuses the
/// same factorization). Rows are [log-amplitude; phase] blocks, source-major;
/// columns are pixel perturbations of mua / mus'.
///
/// Every kappa dependence is differentiated: interior harmonic-mean face
/// coefficients, the Robin face conductances on the system diagonal, the
/// source couplings on the right-hand side, and the detector exitance weights.
inline DotJacobian jacobian(const OpticalField& background, const Instrument& inst) {
    DotSystem sys(background, inst);
    const Grid& g = background.grid;
    const std::size_t n = g.n, N = g.cells();
    const double h = g.spacing();
    const std::size_t ns = inst.sources.size(), nd = inst.detectors.size();
    const std::size_t m = 2 * ns * nd;

    // forward and adjoint fields
    std::vector<Eigen::VectorXcd> phi(ns), psi(nd);
    for (std::size_t s = 0; s < ns; ++s) phi[s] = sys.fluence(s);
    for (std::size_t d = 0; d < nd; ++d) psi[d] = sys.solve(sys.detector_weights(d));

    // per-face patch memberships and conductance derivatives
    const auto& faces = sys.faces();
    std::vector<double> dg_dk(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const double k = background.kappa(faces[f].cell);
        const double gf = sys.face_conductance(f);
        dg_dk[f] = gf * gf * h / (2.0 * k * k);
    }
    std::vector<std::vector<std::size_t>> src_faces(ns), det_faces(nd);
    for (std::size_t s = 0; s < ns; ++s) src_faces[s] = patch_faces(g, faces, inst.sources[s]);
    for (std::size_t d = 0; d < nd; ++d) det_faces[d] = patch_faces(g, faces, inst.detectors[d]);

    std::vector<double> amp_rows(ns * nd * N), phase_rows_a(ns * nd * N);
    std::vector<double> amp_rows_s(ns * nd * N), phase_rows_s(ns * nd * N);

    std::vector<cdouble> t_kappa(N);
    for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t d = 0; d < nd; ++d) {
            const Eigen::VectorXcd& P = phi[s];
            const Eigen::VectorXcd& Q = psi[d];
            const cdouble reading = sys.detector_weights(d).transpose() * P;
            std::fill(t_kappa.begin(), t_kappa.end(), cdouble(0, 0));

            // interior faces: -(Psi_c - Psi_nb)(Phi_c - Phi_nb) d kappa_f
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t c = i * n + j;
                    const auto face = [&](std::size_t nb) {
                        const double kc = background.kappa(c), kn = background.kappa(nb);
                        const cdouble bracket = (Q[static_cast<Eigen::Index>(c)] -
                                                 Q[static_cast<Eigen::Index>(nb)]) *
                                                (P[static_cast<Eigen::Index>(c)] -
                                                 P[static_cast<Eigen::Index>(nb)]);
                        const double denom = (kc + kn) * (kc + kn);
                        t_kappa[c] -= bracket * (2.0 * kn * kn / denom);
                        t_kappa[nb] -= bracket * (2.0 * kc * kc / denom);
                    };
                    if (j + 1 < n) face(c + 1);  // each interior face once (right, up)
                    if (i + 1 < n) face(c + n);
                }

            // boundary conductance on the diagonal: -h dg Psi_c Phi_c
            for (std::size_t f = 0; f < faces.size(); ++f) {
                const std::size_t c = faces[f].cell;
                t_kappa[c] -= h * dg_dk[f] * Q[static_cast<Eigen::Index>(c)] *
                              P[static_cast<Eigen::Index>(c)];
            }
            // source coupling on the right-hand side: +Psi_c h (q/zeta) dg
            for (std::size_t f : src_faces[s]) {
                const std::size_t c = faces[f].cell;
                t_kappa[c] += Q[static_cast<Eigen::Index>(c)] * h *
                              (inst.sources[s].strength / inst.zeta) * dg_dk[f];
            }
            // detector weight: +(1/n_faces) dg Phi_c
            for (std::size_t f : det_faces[d]) {
                const std::size_t c = faces[f].cell;
                t_kappa[c] += P[static_cast<Eigen::Index>(c)] * dg_dk[f] /
                              static_cast<double>(det_faces[d].size());
            }

            const std::size_t row = s * nd + d;
            for (std::size_t c = 0; c < N; ++c) {
                const double k = background.kappa(c);
                const double dk = -2.0 * k * k;  // d kappa / d sigma, sigma = mua + mus'
                const cdouble mass = -Q[static_cast<Eigen::Index>(c)] * (h * h) *
                                     P[static_cast<Eigen::Index>(c)];
                const cdouble dmua = (t_kappa[c] * dk + mass) / reading;
                const cdouble dmus = (t_kappa[c] * dk) / reading;
                amp_rows[row * N + c] = dmua.real();
                phase_rows_a[row * N + c] = dmua.imag();
                amp_rows_s[row * N + c] = dmus.real();
                phase_rows_s[row * N + c] = dmus.imag();
            }
        }
    }

    const FieldShape dom{1, n, n};
    std::vector<double> ja(m * N), js(m * N);
    const std::size_t half = ns * nd;
    for (std::size_t r = 0; r < half; ++r)
        for (std::size_t c = 0; c < N; ++c) {
            ja[r * N + c] = amp_rows[r * N + c];
            ja[(half + r) * N + c] = phase_rows_a[r * N + c];
            js[r * N + c] = amp_rows_s[r * N + c];
            js[(half + r) * N + c] = phase_rows_s[r * N + c];
        }
    DotJacobian out;
    out.j_mua = std::make_shared<DenseMatrixOperator>(dom, m, std::move(ja));
    out.j_mus = std::make_shared<DenseMatrixOperator>(dom, m, std::move(js));
    return out;
}

/// Noisy data from the scaled linear model: y = A x + eps with independent
/// Gaussian noise per block, sigma_amp on log-amplitude and sigma_phase on
/// phase entries. x is the 2-channel rescaled perturbation field in [0, 1].
inline std::vector<double> simulate_difference_data(const Field& truth, const LinearOperator& A,
                                                    double sigma_amp, double sigma_phase,
                                                    std::uint64_t noise_seed,
                                                    bool with_noise = true) {
    std::vector<double> y = A.apply(truth);
    if (with_noise) {
        RngStream rng(noise_seed);
        const std::size_t half = y.size() / 2;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double sigma = i < half ? sigma_amp : sigma_phase;
            y[i] += sigma * rng.normal();
        }
    }
    return y;
}

}  // namespace sbdot::dotfwd

#endif
