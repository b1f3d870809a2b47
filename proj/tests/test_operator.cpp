#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "sbdot/linear_operator.hpp"
#include "sbdot/matrix_io.hpp"
#include "sbdot/rng.hpp"

using namespace sbdot;

namespace {

Field random_field(FieldShape s, RngStream& rng) {
    Field f(s);
    for (auto& v : f.v) v = rng.normal();
    return f;
}

std::vector<double> random_vec(std::size_t n, RngStream& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double adjoint_mismatch(const LinearOperator& op, RngStream& rng) {
    Field x = random_field(op.domain_shape(), rng);
    auto y = random_vec(op.codomain_dim(), rng);
    auto ax = op.apply(x);
    Field aty = op.apply_adjoint(y);
    const double lhs = dot(ax, y);
    const double rhs = dot(x.v, aty.v);
    const double scale = norm2(ax) * norm2(y) + norm2(x.v) * norm2(aty.v);
    return std::abs(lhs - rhs) / std::max(scale, 1e-300);
}

}  // namespace

TEST_CASE("identity operator applies and adjoints") {
    IdentityOperator id(FieldShape{1, 2, 3});
    RngStream rng(7);
    Field x = random_field(id.domain_shape(), rng);
    CHECK(id.apply(x) == x.v);
    CHECK(id.apply_adjoint(x.v).v == x.v);
}

TEST_CASE("2x2 dense matrix apply and adjoint rows") {
    DenseMatrixOperator op(FieldShape{1, 1, 2}, 2, {1.0, 2.0, 3.0, 4.0});
    Field x(FieldShape{1, 1, 2}, {1.0, 1.0});
    auto y = op.apply(x);
    CHECK(y[0] == Catch::Approx(3.0));
    CHECK(y[1] == Catch::Approx(7.0));
    Field at = op.apply_adjoint({1.0, 0.0});
    CHECK(at.v[0] == Catch::Approx(1.0));
    CHECK(at.v[1] == Catch::Approx(2.0));
}

TEST_CASE("zero operator maps everything to zero") {
    ZeroOperator z(FieldShape{2, 3, 3}, 5);
    RngStream rng(3);
    Field x = random_field(z.domain_shape(), rng);
    for (double v : z.apply(x)) CHECK(v == 0.0);
}

TEST_CASE("dense operator shape checks") {
    DenseMatrixOperator op(FieldShape{1, 1, 2}, 2, {1.0, 2.0, 3.0, 4.0});
    Field bad(FieldShape{1, 1, 3});
    CHECK_THROWS_AS(op.apply(bad), DimensionError);
    CHECK_THROWS_AS(op.apply_adjoint({1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("randomized adjoint identity holds for dense operators") {
    RngStream rng(42);
    const FieldShape dom{2, 3, 4};
    const std::size_t m = 7;
    auto entries = random_vec(m * dom.size(), rng);
    DenseMatrixOperator op(dom, m, entries);
    for (int k = 0; k < 100; ++k) CHECK(adjoint_mismatch(op, rng) <= 1e-10);
}

TEST_CASE("apply is linear") {
    RngStream rng(11);
    const FieldShape dom{1, 4, 4};
    DenseMatrixOperator op(dom, 9, random_vec(9 * dom.size(), rng));
    Field x = random_field(dom, rng), z = random_field(dom, rng);
    const double a = 1.7, b = -0.3;
    Field comb(dom);
    for (std::size_t i = 0; i < comb.size(); ++i) comb.v[i] = a * x.v[i] + b * z.v[i];
    auto lhs = op.apply(comb);
    auto ax = op.apply(x);
    auto az = op.apply(z);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        const double want = a * ax[i] + b * az[i];
        CHECK(lhs[i] == Catch::Approx(want).margin(1e-12 * (1.0 + std::abs(want))));
    }
}

TEST_CASE("scaling an operator scales both directions") {
    RngStream rng(13);
    const FieldShape dom{1, 3, 3};
    auto base = std::make_shared<DenseMatrixOperator>(dom, 4, random_vec(4 * dom.size(), rng));
    const double alpha = -2.5;
    ScaledOperator scaled(alpha, base);
    Field x = random_field(dom, rng);
    auto y1 = scaled.apply(x);
    auto y0 = base->apply(x);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == Catch::Approx(alpha * y0[i]));
    for (int k = 0; k < 100; ++k) CHECK(adjoint_mismatch(scaled, rng) <= 1e-10);
}

TEST_CASE("rescale_jacobian block scales and offset") {
    const FieldShape chan{1, 4, 4};
    auto id0 = std::make_shared<IdentityOperator>(chan);
    auto id1 = std::make_shared<IdentityOperator>(chan);
    auto block = rescale_jacobian(id0, id1);

    Field x(FieldShape{2, 4, 4});
    SECTION("absorption channel only") {
        for (std::size_t i = 0; i < 16; ++i) x.v[i] = 1.0;
        for (double v : block->apply(x)) CHECK(v == Catch::Approx(0.02));
    }
    SECTION("scattering channel only") {
        for (std::size_t i = 16; i < 32; ++i) x.v[i] = 1.0;
        for (double v : block->apply(x)) CHECK(v == Catch::Approx(2.0));
    }
    SECTION("zero field") {
        for (double v : block->apply(x)) CHECK(v == 0.0);
    }
    SECTION("offset equals image of the mid-range field") {
        // 0.01 * J0 1 + 1.0 * J1 1 with identity blocks
        for (double v : block->data_offset()) CHECK(v == Catch::Approx(1.01));
        std::vector<double> raw(block->codomain_dim(), 2.0);
        auto shifted = block->shift_raw_data(raw);
        for (double v : shifted) CHECK(v == Catch::Approx(3.01));
    }
    SECTION("adjoint test") {
        RngStream rng(5);
        for (int k = 0; k < 100; ++k) CHECK(adjoint_mismatch(*block, rng) <= 1e-10);
    }
}

TEST_CASE("block operator rejects mismatched codomains") {
    const FieldShape chan{1, 2, 2};
    auto a = std::make_shared<ZeroOperator>(chan, 3);
    auto b = std::make_shared<ZeroOperator>(chan, 4);
    CHECK_THROWS_AS(rescale_jacobian(a, b), DimensionError);
}

TEST_CASE("matrix file round-trips bit-exactly") {
    RngStream rng(99);
    const FieldShape dom{1, 2, 3};
    auto entries = random_vec(4 * dom.size(), rng);
    entries[1] = -0.0;  // sign-of-zero must survive
    DenseMatrixOperator op(dom, 4, entries);
    const auto path = std::filesystem::temp_directory_path() / "sbdot_test_matrix.bin";
    write_operator(path.string(), op);
    auto back = read_operator(path.string(), dom);
    REQUIRE(back.entries().size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CHECK(std::memcmp(&back.entries()[i], &entries[i], sizeof(double)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("matrix file rejects wrong magic") {
    const auto path = std::filesystem::temp_directory_path() / "sbdot_bad_magic.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os.write("NOTMAT0", 7);
        std::uint64_t mn[2] = {1, 1};
        os.write(reinterpret_cast<const char*>(mn), 16);
        double v = 0.0;
        os.write(reinterpret_cast<const char*>(&v), 8);
    }
    CHECK_THROWS_AS(read_matrix_file(path.string()), IoError);
    std::filesystem::remove(path);
}
