#ifndef SBDOT_DOT_FORWARD_HPP
#define SBDOT_DOT_FORWARD_HPP

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <vector>

#include "sbdot/core.hpp"
#include "sbdot/rng.hpp"

namespace sbdot::dotfwd {

using cdouble = std::complex<double>;

/// Absorption and reduced scattering on a square cell-centred grid (mm^-1).
struct OpticalField {
    Grid grid;
    std::vector<double> mua;
    std::vector<double> mus;

    static OpticalField homogeneous(Grid g, double mua_val, double mus_val) {
        OpticalField f;
        f.grid = g;
        f.mua.assign(g.cells(), mua_val);
        f.mus.assign(g.cells(), mus_val);
        return f;
    }

    void validate() const {
        if (mua.size() != grid.cells() || mus.size() != grid.cells())
            throw DimensionError("OpticalField: coefficient arrays do not match the grid");
        for (std::size_t i = 0; i < mua.size(); ++i)
            if (!(mua[i] > 0.0) || !(mus[i] > 0.0))
                throw ParameterError("OpticalField: coefficients must be strictly positive");
    }

    /// diffusion coefficient 1/(d (mua + mus')), d = 2
    double kappa(std::size_t cell) const { return 1.0 / (2.0 * (mua[cell] + mus[cell])); }
};

/// Boundary patch parametrized by its position along the square perimeter.
/// The perimeter coordinate runs counterclockwise from the bottom-left corner
/// (bottom, right, top, left); center_frac in [0, 1) is the fraction of the
/// total perimeter, mirroring the angular placement on a circular boundary.
struct Patch {
    double center_frac = 0.0;
    double width_mm = 1.0;
    double strength = 1.0;  // source strength q; unused for detectors
};

struct Instrument {
    std::vector<Patch> sources;
    std::vector<Patch> detectors;
    double omega = 0.0;                  // angular modulation frequency, rad/s
    double c_mm_s = 2.14e11;             // speed of light in the medium, mm/s
    double zeta = 1.0 / std::numbers::pi;  // 2D dimension constant
    double alpha_bc = 1.0;               // boundary reflection parameter

    void validate() const {
        if (sources.empty() || detectors.empty())
            throw ParameterError("Instrument: need at least one source and one detector");
        if (omega < 0.0) throw ParameterError("Instrument: omega must be >= 0");
        if (!(c_mm_s > 0.0) || !(zeta > 0.0) || !(alpha_bc > 0.0))
            throw ParameterError("Instrument: physical constants must be positive");
        for (const auto& p : sources)
            if (!(p.width_mm > 0.0)) throw ParameterError("Instrument: patch width must be > 0");
        for (const auto& p : detectors)
            if (!(p.width_mm > 0.0)) throw ParameterError("Instrument: patch width must be > 0");
    }

    /// n sources equally spaced around the full boundary, detectors interleaved.
    static Instrument full_view(std::size_t n_src = 20, std::size_t n_det = 20,
                                double src_width = 1.0, double det_width = 1.0,
                                double frequency_hz = 100e6) {
        Instrument inst;
        for (std::size_t k = 0; k < n_src; ++k)
            inst.sources.push_back({static_cast<double>(k) / static_cast<double>(n_src),
                                    src_width, 1.0});
        for (std::size_t k = 0; k < n_det; ++k)
            inst.detectors.push_back(
                {(static_cast<double>(k) + 0.5) / static_cast<double>(n_det), det_width, 1.0});
        inst.omega = 2.0 * std::numbers::pi * frequency_hz;
        return inst;
    }

    /// Sources and detectors confined to a 180-degree arc, interleaved.
    static Instrument limited_view(std::size_t n_src = 10, std::size_t n_det = 10,
                                   double src_width = 1.0, double det_width = 1.0,
                                   double frequency_hz = 100e6) {
        Instrument inst;
        for (std::size_t k = 0; k < n_src; ++k)
            inst.sources.push_back(
                {0.5 * (static_cast<double>(k) + 0.25) / static_cast<double>(n_src), src_width,
                 1.0});
        for (std::size_t k = 0; k < n_det; ++k)
            inst.detectors.push_back(
                {0.5 * (static_cast<double>(k) + 0.75) / static_cast<double>(n_det), det_width,
                 1.0});
        inst.omega = 2.0 * std::numbers::pi * frequency_hz;
        return inst;
    }

    /// 16 + 16 full-circle layout with wide sources and narrow detectors.
    static Instrument experimental(double frequency_hz = 56.98e6) {
        Instrument inst = full_view(16, 16, 8.0, 0.6, frequency_hz);
        return inst;
    }
};

/// One boundary face of a boundary cell.
struct BoundaryFace {
    std::size_t cell = 0;
    double perimeter_pos = 0.0;  // midpoint along the perimeter, mm
};

inline std::vector<BoundaryFace> boundary_faces(const Grid& g) {
    const std::size_t n = g.n;
    const double h = g.spacing();
    const double L = g.extent_mm;
    std::vector<BoundaryFace> faces;
    faces.reserve(4 * n);
    for (std::size_t j = 0; j < n; ++j)  // bottom, left -> right
        faces.push_back({0 * n + j, (static_cast<double>(j) + 0.5) * h});
    for (std::size_t i = 0; i < n; ++i)  // right, bottom -> top
        faces.push_back({i * n + (n - 1), L + (static_cast<double>(i) + 0.5) * h});
    for (std::size_t j = 0; j < n; ++j)  // top, right -> left
        faces.push_back({(n - 1) * n + (n - 1 - j), 2.0 * L + (static_cast<double>(j) + 0.5) * h});
    for (std::size_t i = 0; i < n; ++i)  // left, top -> bottom
        faces.push_back({(n - 1 - i) * n + 0, 3.0 * L + (static_cast<double>(i) + 0.5) * h});
    return faces;
}

/// Faces covered by a patch: midpoint within width/2 of the patch centre along
/// the (wrapping) perimeter; falls back to the nearest face for very narrow
/// patches.
inline std::vector<std::size_t> patch_faces(const Grid& g, const std::vector<BoundaryFace>& faces,
                                            const Patch& p) {
    const double per = 4.0 * g.extent_mm;
    const double center = p.center_frac * per;
    std::vector<std::size_t> out;
    double best_dist = per;
    std::size_t best = 0;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        double d = std::abs(faces[f].perimeter_pos - center);
        d = std::min(d, per - d);
        if (d < best_dist) {
            best_dist = d;
            best = f;
        }
        if (d < 0.5 * p.width_mm * (1.0 + 1e-12)) out.push_back(f);
    }
    if (out.empty()) out.push_back(best);
    return out;
}

/// Assembled frequency-domain diffusion system on a grid: 5-point
/// flux-conservative stencil with harmonic-mean face diffusivities and
/// ghost-eliminated Robin boundary faces. Factorized once; reused across all
/// source and detector solves.
class DotSystem {
  public:
    DotSystem(const OpticalField& optics, const Instrument& inst)
        : optics_(optics), inst_(inst), faces_(boundary_faces(optics.grid)) {
        optics_.validate();
        inst_.validate();
        const Grid& g = optics_.grid;
        const std::size_t n = g.n, N = g.cells();
        const double h = g.spacing();
        const cdouble jwc(0.0, inst_.omega / inst_.c_mm_s);

        // face conductances for the ghost-eliminated Robin condition
        face_g_.resize(faces_.size());
        for (std::size_t f = 0; f < faces_.size(); ++f) {
            const double k = optics_.kappa(faces_[f].cell);
            face_g_[f] = 1.0 / (h / (2.0 * k) + inst_.alpha_bc / (2.0 * inst_.zeta));
        }

        std::vector<Eigen::Triplet<cdouble>> trips;
        trips.reserve(5 * N);
        std::vector<cdouble> diag(N, cdouble(0.0, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t c = i * n + j;
                diag[c] += (optics_.mua[c] + jwc) * h * h;
                const auto couple = [&](std::size_t nb) {
                    const double kf = harmonic(optics_.kappa(c), optics_.kappa(nb));
                    diag[c] += kf;
                    trips.emplace_back(static_cast<int>(c), static_cast<int>(nb), cdouble(-kf, 0));
                };
                if (j + 1 < n) couple(c + 1);
                if (j > 0) couple(c - 1);
                if (i + 1 < n) couple(c + n);
                if (i > 0) couple(c - n);
            }
        for (std::size_t f = 0; f < faces_.size(); ++f)
            diag[faces_[f].cell] += h * face_g_[f];
        for (std::size_t c = 0; c < N; ++c)
            trips.emplace_back(static_cast<int>(c), static_cast<int>(c), diag[c]);

        M_.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
        M_.setFromTriplets(trips.begin(), trips.end());
        M_.makeCompressed();
        solver_.compute(M_);
        if (solver_.info() != Eigen::Success) {
            // iterative fallback
            iterative_ = std::make_unique<Eigen::BiCGSTAB<Eigen::SparseMatrix<cdouble>>>();
            iterative_->setTolerance(1e-10);
            iterative_->compute(M_);
            if (iterative_->info() != Eigen::Success)
                throw NumericalError("DotSystem: sparse factorization failed");
        }
    }

    static double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

    const Grid& grid() const { return optics_.grid; }
    const OpticalField& optics() const { return optics_; }
    const Instrument& instrument() const { return inst_; }
    const std::vector<BoundaryFace>& faces() const { return faces_; }
    double face_conductance(std::size_t f) const { return face_g_[f]; }

    /// Right-hand side of source si: h * g_f * q / zeta on each covered face.
    Eigen::VectorXcd source_rhs(std::size_t si) const {
        if (si >= inst_.sources.size()) throw ParameterError("source index out of range");
        const Patch& p = inst_.sources[si];
        Eigen::VectorXcd b = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(grid().cells()));
        const double h = grid().spacing();
        for (std::size_t f : patch_faces(grid(), faces_, p))
            b[static_cast<Eigen::Index>(faces_[f].cell)] +=
                h * face_g_[f] * p.strength / inst_.zeta;
        return b;
    }

    /// Detector functional: exitance g_f * Phi_cell averaged over patch faces.
    Eigen::VectorXcd detector_weights(std::size_t di) const {
        if (di >= inst_.detectors.size()) throw ParameterError("detector index out of range");
        const Patch& p = inst_.detectors[di];
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(grid().cells()));
        const auto fs = patch_faces(grid(), faces_, p);
        for (std::size_t f : fs)
            w[static_cast<Eigen::Index>(faces_[f].cell)] +=
                face_g_[f] / static_cast<double>(fs.size());
        return w;
    }

    Eigen::VectorXcd solve(const Eigen::VectorXcd& rhs) const {
        Eigen::VectorXcd x;
        if (iterative_) {
            x = iterative_->solve(rhs);
            if (iterative_->info() != Eigen::Success)
                throw NumericalError("DotSystem: iterative solve failed");
        } else {
            x = solver_.solve(rhs);
            if (solver_.info() != Eigen::Success)
                throw NumericalError("DotSystem: linear solve failed");
        }
        const double resid = (M_ * x - rhs).norm();
        const double scale = std::max(rhs.norm(), 1e-300);
        if (!(resid <= 1e-8 * scale))
            throw NumericalError("DotSystem: solve residual " + std::to_string(resid / scale));
        return x;
    }

    Eigen::VectorXcd fluence(std::size_t si) const { return solve(source_rhs(si)); }

    double system_residual(const Eigen::VectorXcd& x, const Eigen::VectorXcd& rhs) const {
        return (M_ * x - rhs).norm() / std::max(rhs.norm(), 1e-300);
    }

  private:
    OpticalField optics_;
    Instrument inst_;
    std::vector<BoundaryFace> faces_;
    std::vector<double> face_g_;
    Eigen::SparseMatrix<cdouble> M_;
    Eigen::SparseLU<Eigen::SparseMatrix<cdouble>> solver_;
    std::unique_ptr<Eigen::BiCGSTAB<Eigen::SparseMatrix<cdouble>>> iterative_;
};

/// Photon fluence for one source as a complex field over the grid.
inline std::vector<cdouble> solve_forward(const OpticalField& optics, const Instrument& inst,
                                          std::size_t source_index) {
    DotSystem sys(optics, inst);
    Eigen::VectorXcd phi = sys.fluence(source_index);
    return std::vector<cdouble>(phi.data(), phi.data() + phi.size());
}

/// Log-amplitude and phase blocks stacked: values[k] = log|G_k|,
/// values[n_pairs + k] = arg(G_k) in (-pi, pi].
struct MeasurementSet {
    std::vector<double> values;
    double noise_std_amp = 0.05;
    double noise_std_phase = 0.001;

    std::size_t n_pairs() const { return values.size() / 2; }
};

/// Complex per-detector boundary readings of one fluence field.
inline std::vector<cdouble> detector_readings(const DotSystem& sys,
                                              const Eigen::VectorXcd& phi) {
    std::vector<cdouble> out;
    out.reserve(sys.instrument().detectors.size());
    for (std::size_t d = 0; d < sys.instrument().detectors.size(); ++d)
        out.push_back(sys.detector_weights(d).transpose() * phi);
    return out;
}

inline MeasurementSet measurements_from_readings(const std::vector<cdouble>& readings) {
    MeasurementSet m;
    const std::size_t k = readings.size();
    m.values.resize(2 * k);
    for (std::size_t i = 0; i < k; ++i) {
        const double mag = std::abs(readings[i]);
        if (!(mag > 0.0) || !std::isfinite(mag))
            throw NumericalError("measure: zero or non-finite exitance at detector " +
                                 std::to_string(i));
        m.values[i] = std::log(mag);
        m.values[k + i] = std::arg(readings[i]);
    }
    return m;
}

/// Measurements of one source's fluence across all detectors.
inline MeasurementSet measure(const std::vector<cdouble>& phi, const OpticalField& optics,
                              const Instrument& inst) {
    DotSystem sys(optics, inst);
    if (phi.size() != optics.grid.cells())
        throw DimensionError("measure: fluence size does not match grid");
    Eigen::Map<const Eigen::VectorXcd> p(phi.data(), static_cast<Eigen::Index>(phi.size()));
    return measurements_from_readings(detector_readings(sys, Eigen::VectorXcd(p)));
}

/// Full nonlinear measurement map: all sources, stacked source-major within
/// each block: index s * n_det + d.
inline MeasurementSet forward_measure_all(const OpticalField& optics, const Instrument& inst) {
    DotSystem sys(optics, inst);
    const std::size_t ns = inst.sources.size(), nd = inst.detectors.size();
    std::vector<cdouble> readings;
    readings.reserve(ns * nd);
    for (std::size_t s = 0; s < ns; ++s) {
        Eigen::VectorXcd phi = sys.fluence(s);
        for (std::size_t d = 0; d < nd; ++d)
            readings.push_back(sys.detector_weights(d).transpose() * phi);
    }
    return measurements_from_readings(readings);
}

}  // namespace sbdot::dotfwd

#endif
