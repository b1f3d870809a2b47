#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "sbdot/dot/forward.hpp"
#include "sbdot/dot/jacobian.hpp"
#include "sbdot/rng.hpp"

using namespace sbdot;
using namespace sbdot::dotfwd;

namespace {

Instrument one_pair(double src_frac, double det_frac, double width, double frequency_hz) {
    Instrument inst;
    inst.sources.push_back({src_frac, width, 1.0});
    inst.detectors.push_back({det_frac, width, 1.0});
    inst.omega = 2.0 * std::numbers::pi * frequency_hz;
    return inst;
}

std::vector<double> nonlinear_map(const OpticalField& optics, const Instrument& inst) {
    return forward_measure_all(optics, inst).values;
}

}  // namespace

TEST_CASE("zero-frequency homogeneous fluence is real and positive") {
    Grid g{16, 50.0};
    auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = one_pair(0.125, 0.625, 2.0 * g.spacing(), 0.0);
    auto phi = solve_forward(optics, inst, 0);
    for (const auto& z : phi) {
        CHECK(z.real() > 0.0);
        CHECK(std::abs(z.imag()) <= 1e-14 * std::abs(z.real()));
    }
}

TEST_CASE("mirror-symmetric source gives a mirror-symmetric fluence") {
    Grid g{16, 50.0};
    auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
    // source centred on the bottom edge, width an even number of faces
    Instrument inst = one_pair(0.125, 0.625, 2.0 * g.spacing(), 100e6);
    auto phi = solve_forward(optics, inst, 0);
    double scale = 0.0;
    for (const auto& z : phi) scale = std::max(scale, std::abs(z));
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            const auto a = phi[i * g.n + j];
            const auto b = phi[i * g.n + (g.n - 1 - j)];
            CHECK(std::abs(a - b) <= 1e-10 * scale);
        }
}

TEST_CASE("assembled system residual is tiny at the solution") {
    Grid g{16, 50.0};
    auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = Instrument::full_view(4, 4, 2.0, 2.0);
    DotSystem sys(optics, inst);
    for (std::size_t s = 0; s < 4; ++s) {
        auto rhs = sys.source_rhs(s);
        auto phi = sys.solve(rhs);
        CHECK(sys.system_residual(phi, rhs) <= 1e-9);
    }
}

TEST_CASE("scaling the source strength shifts log-amplitude, not phase") {
    Grid g{12, 50.0};
    auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = one_pair(0.125, 0.625, 3.0 * g.spacing(), 100e6);
    auto base = forward_measure_all(optics, inst);
    const double c = 7.5;
    Instrument scaled = inst;
    scaled.sources[0].strength *= c;
    auto shifted = forward_measure_all(optics, scaled);
    CHECK(shifted.values[0] - base.values[0] == Catch::Approx(std::log(c)).margin(1e-12));
    CHECK(shifted.values[1] == Catch::Approx(base.values[1]).margin(1e-12));
}

TEST_CASE("zero modulation frequency gives zero phases") {
    Grid g{12, 50.0};
    auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = Instrument::full_view(3, 3, 2.0, 2.0, 0.0);
    auto m = forward_measure_all(optics, inst);
    const std::size_t half = m.n_pairs();
    for (std::size_t i = 0; i < half; ++i) CHECK(std::abs(m.values[half + i]) <= 1e-14);
}

TEST_CASE("reciprocity: swapping equal-geometry source and detector") {
    Grid g{16, 50.0};
    OpticalField optics = OpticalField::homogeneous(g, 0.01, 1.0);
    // heterogeneous background so the check is not trivially symmetric
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
            if (i > 4 && i < 9 && j > 6 && j < 11) {
                optics.mua[i * g.n + j] = 0.02;
                optics.mus[i * g.n + j] = 1.3;
            }
    const double w = 2.0 * g.spacing();
    auto fwd = forward_measure_all(optics, one_pair(0.1, 0.55, w, 100e6));
    auto rev = forward_measure_all(optics, one_pair(0.55, 0.1, w, 100e6));
    CHECK(std::abs(fwd.values[0] - rev.values[0]) <=
          1e-6 * std::max(1.0, std::abs(fwd.values[0])));
    CHECK(std::abs(fwd.values[1] - rev.values[1]) <=
          1e-6 * std::max(1.0, std::abs(fwd.values[1])));
}

TEST_CASE("jacobian columns match nonlinear finite differences", "[slow]") {
    Grid g{16, 50.0};
    auto background = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = Instrument::full_view(4, 4, 3.0, 3.0);
    DotJacobian J = jacobian(background, inst);
    const auto base = nonlinear_map(background, inst);
    const std::size_t m = base.size();
    REQUIRE(J.j_mua->codomain_dim() == m);

    const double h = 1e-6;
    RngStream rng(5);
    for (int rep = 0; rep < 8; ++rep) {
        const std::size_t c = rng.index(g.cells());
        for (int which = 0; which < 2; ++which) {
            OpticalField pert = background;
            (which == 0 ? pert.mua : pert.mus)[c] += h;
            const auto up = nonlinear_map(pert, inst);
            std::vector<double> fd(m), col(m);
            const auto& block = which == 0 ? J.j_mua : J.j_mus;
            const auto& entries = block->entries();
            const std::size_t n = g.cells();
            for (std::size_t r = 0; r < m; ++r) {
                fd[r] = (up[r] - base[r]) / h;
                col[r] = entries[r * n + c];
            }
            double num = 0.0, den = 0.0;
            for (std::size_t r = 0; r < m; ++r) {
                num += (fd[r] - col[r]) * (fd[r] - col[r]);
                den += fd[r] * fd[r];
            }
            INFO("cell " << c << " channel " << which);
            CHECK(std::sqrt(num / den) <= 1e-3);
        }
    }
}

TEST_CASE("zero perturbation gives zero data change") {
    Grid g{8, 50.0};
    auto background = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = Instrument::full_view(2, 2, 6.0, 6.0);
    DotJacobian J = jacobian(background, inst);
    auto A = rescale_jacobian(J.j_mua, J.j_mus);
    Field zero(FieldShape{2, g.n, g.n});
    for (double v : A->apply(zero)) CHECK(v == 0.0);
}

TEST_CASE("sensitivity of a symmetric pair is mirror symmetric") {
    Grid g{16, 50.0};
    auto background = OpticalField::homogeneous(g, 0.01, 1.0);
    // source bottom centre, detector top centre: geometry symmetric in x
    Instrument inst = one_pair(0.125, 0.625, 2.0 * g.spacing(), 100e6);
    DotJacobian J = jacobian(background, inst);
    const auto& e = J.j_mua->entries();
    const std::size_t n = g.cells();
    double scale = 0.0;
    for (std::size_t c = 0; c < n; ++c) scale = std::max(scale, std::abs(e[c]));
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            const double a = e[i * g.n + j];
            const double b = e[i * g.n + (g.n - 1 - j)];
            CHECK(std::abs(a - b) <= 1e-8 * scale);
        }
}

TEST_CASE("jacobian operator passes the randomized adjoint test") {
    Grid g{8, 50.0};
    auto background = OpticalField::homogeneous(g, 0.01, 1.0);
    Instrument inst = Instrument::full_view(3, 3, 5.0, 5.0);
    DotJacobian J = jacobian(background, inst);
    auto A = rescale_jacobian(J.j_mua, J.j_mus);
    RngStream rng(17);
    for (int k = 0; k < 100; ++k) {
        Field x(A->domain_shape());
        for (auto& v : x.v) v = rng.normal();
        std::vector<double> y(A->codomain_dim());
        for (auto& v : y) v = rng.normal();
        auto ax = A->apply(x);
        Field aty = A->apply_adjoint(y);
        const double lhs = dot(ax, y), rhs = dot(x.v, aty.v);
        const double scale = norm2(ax) * norm2(y) + norm2(x.v) * norm2(aty.v);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(scale, 1e-300));
    }
}

TEST_CASE("grid refinement: homogeneous measurements converge at second order", "[slow]") {
    // patch positions and widths tile the same physical boundary segments at
    // every resolution, so only the discretization error varies
    auto data_at = [&](std::size_t n) {
        Grid g{n, 50.0};
        auto optics = OpticalField::homogeneous(g, 0.01, 1.0);
        Instrument inst = one_pair(0.125, 0.625, 12.5, 100e6);
        return forward_measure_all(optics, inst).values;
    };
    auto y16 = data_at(16), y32 = data_at(32), y64 = data_at(64);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < y16.size(); ++i) {
        d1 += (y16[i] - y32[i]) * (y16[i] - y32[i]);
        d2 += (y32[i] - y64[i]) * (y32[i] - y64[i]);
    }
    const double ratio = std::sqrt(d1 / d2);
    INFO("refinement ratio " << ratio);
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
}

TEST_CASE("data and inversion grids can differ") {
    Instrument inst = Instrument::full_view(2, 2, 6.0, 6.0);
    Grid data_grid{17, 50.0}, inv_grid{16, 50.0};
    auto bg_data = OpticalField::homogeneous(data_grid, 0.01, 1.0);
    auto bg_inv = OpticalField::homogeneous(inv_grid, 0.01, 1.0);
    DotJacobian Jd = jacobian(bg_data, inst);
    DotJacobian Ji = jacobian(bg_inv, inst);
    CHECK(Jd.j_mua->domain_shape().height == 17);
    CHECK(Ji.j_mua->domain_shape().height == 16);
    CHECK(Jd.j_mua->codomain_dim() == Ji.j_mua->codomain_dim());
    // both Jacobians describe the same physics: the response to a constant
    // perturbation agrees across resolutions up to discretization error
    Field ones_d(FieldShape{1, 17, 17}, std::vector<double>(17 * 17, 1.0));
    Field ones_i(FieldShape{1, 16, 16}, std::vector<double>(16 * 16, 1.0));
    auto yd = Jd.j_mua->apply(ones_d);
    auto yi = Ji.j_mua->apply(ones_i);
    for (std::size_t r = 0; r < yd.size(); ++r)
        CHECK(yd[r] == Catch::Approx(yi[r]).epsilon(0.05).margin(1e-6));
}

TEST_CASE("simulated difference data: noise level and determinism") {
    FieldShape dom{1, 8, 8};
    auto id0 = std::make_shared<IdentityOperator>(dom);
    auto id1 = std::make_shared<IdentityOperator>(dom);
    auto A = rescale_jacobian(id0, id1);

    Field zero(FieldShape{2, 8, 8});
    SECTION("noise disabled, zero field maps to zero") {
        auto y = simulate_difference_data(zero, *A, 0.05, 0.001, 1, /*with_noise=*/false);
        for (double v : y) CHECK(v == 0.0);
    }
    SECTION("equal seeds reproduce, block noise levels match") {
        auto y1 = simulate_difference_data(zero, *A, 0.05, 0.001, 42);
        auto y2 = simulate_difference_data(zero, *A, 0.05, 0.001, 42);
        CHECK(y1 == y2);

        // Monte Carlo noise std within 1% per block
        const std::size_t reps = 3200;
        const std::size_t m = A->codomain_dim(), half = m / 2;
        double ss_amp = 0.0, ss_ph = 0.0;
        for (std::size_t k = 0; k < reps; ++k) {
            auto y = simulate_difference_data(zero, *A, 0.05, 0.001, 1000 + k);
            for (std::size_t i = 0; i < half; ++i) ss_amp += y[i] * y[i];
            for (std::size_t i = half; i < m; ++i) ss_ph += y[i] * y[i];
        }
        const double n_amp = static_cast<double>(reps * half);
        CHECK(std::sqrt(ss_amp / n_amp) == Catch::Approx(0.05).epsilon(0.01));
        CHECK(std::sqrt(ss_ph / n_amp) == Catch::Approx(0.001).epsilon(0.01));
    }
}

TEST_CASE("optical field validation") {
    Grid g{4, 10.0};
    auto f = OpticalField::homogeneous(g, 0.01, 1.0);
    f.mua[3] = 0.0;
    CHECK_THROWS_AS(f.validate(), ParameterError);
    f = OpticalField::homogeneous(g, 0.01, 1.0);
    f.mus.pop_back();
    CHECK_THROWS_AS(f.validate(), DimensionError);
}

TEST_CASE("instrument validation and patch coverage") {
    Instrument inst;
    CHECK_THROWS_AS(inst.validate(), ParameterError);
    inst = Instrument::full_view(4, 4, 1.0, 1.0);
    inst.omega = -1.0;
    CHECK_THROWS_AS(inst.validate(), ParameterError);

    Grid g{8, 40.0};
    auto faces = boundary_faces(g);
    REQUIRE(faces.size() == 32);
    // very narrow patch snaps to the nearest face
    auto fs = patch_faces(g, faces, Patch{0.0, 1e-9, 1.0});
    CHECK(fs.size() == 1);
    // full-perimeter patch covers everything
    auto all = patch_faces(g, faces, Patch{0.5, 4.0 * g.extent_mm, 1.0});
    CHECK(all.size() == faces.size());
}
