#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "sbdot/ad/fft.hpp"
#include "sbdot/ad/tape.hpp"
#include "sbdot/rng.hpp"

using namespace sbdot;
using ad::Tape;

namespace {

void fill_random(std::vector<double>& v, RngStream& rng, double scale = 1.0) {
    for (auto& x : v) x = scale * rng.normal();
}

}  // namespace

TEST_CASE("unitary FFT round trip and Parseval") {
    RngStream rng(1);
    const std::size_t H = 8, W = 8;
    std::vector<double> x(H * W);
    fill_random(x, rng);
    auto spec = ad::fft2_of_real(x.data(), H, W);
    double ex = 0.0, es = 0.0;
    for (double v : x) ex += v * v;
    for (auto z : spec) es += std::norm(z);
    CHECK(es == Catch::Approx(ex).epsilon(1e-12));
    ad::fft2_unitary(spec, H, W, /*inverse=*/true);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(spec[i].real() == Catch::Approx(x[i]).margin(1e-12));
}

TEST_CASE("quadratic loss gradient is the input") {
    Tape t;
    std::vector<double> xv{0.5, -1.25, 2.0};
    const int x = t.input({3}, xv, /*needs_grad=*/true);
    const int loss = ad::half_sqnorm(t, x);
    t.backward(loss);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(t.grad(x)[i] == Catch::Approx(xv[i]));
}

TEST_CASE("constant loss leaves zero gradients") {
    Tape t;
    ad::Param p("p", {4});
    p.value = {1.0, 2.0, 3.0, 4.0};
    const int leaf = t.leaf_of(p);
    const int zeroed = ad::scale(t, leaf, 0.0);
    const int loss = ad::half_sqnorm(t, zeroed);
    t.backward(loss);
    for (double g : p.grad) CHECK(g == 0.0);
}

TEST_CASE("activation gradients match finite differences") {
    RngStream rng(3);
    for (auto kind : {ad::Act::silu, ad::Act::gelu, ad::Act::tanh_act}) {
        ad::Param p("p", {5});
        fill_random(p.value, rng);
        auto loss_value = [&](const std::vector<double>& pv) {
            Tape t;
            ad::Param q = p;
            q.value = pv;
            const int act = ad::activation(t, t.leaf_of(q), kind);
            const int loss = ad::half_sqnorm(t, act);
            return t.value(loss)[0];
        };
        Tape t;
        const int act = ad::activation(t, t.leaf_of(p), kind);
        const int loss = ad::half_sqnorm(t, act);
        p.zero_grad();
        t.backward(loss);
        const double h = 1e-6;
        for (std::size_t i = 0; i < 5; ++i) {
            auto up = p.value, dn = p.value;
            up[i] += h;
            dn[i] -= h;
            const double fd = (loss_value(up) - loss_value(dn)) / (2.0 * h);
            CHECK(p.grad[i] == Catch::Approx(fd).margin(1e-5));
        }
    }
}

TEST_CASE("channel affine gradients match finite differences") {
    RngStream rng(5);
    const std::size_t B = 2, Ci = 3, Co = 2, H = 2, W = 2;
    ad::Param w("w", {Co, Ci}), b("b", {Co});
    fill_random(w.value, rng);
    fill_random(b.value, rng);
    std::vector<double> xv(B * Ci * H * W);
    fill_random(xv, rng);

    auto loss_value = [&](const std::vector<double>& wv, const std::vector<double>& bv,
                          const std::vector<double>& x_in) {
        Tape t;
        ad::Param w2 = w, b2 = b;
        w2.value = wv;
        b2.value = bv;
        const int x = t.input({B, Ci, H, W}, x_in, true);
        const int out = ad::channel_affine(t, x, t.leaf_of(w2), t.leaf_of(b2));
        const int loss = ad::half_sqnorm(t, out);
        return t.value(loss)[0];
    };

    Tape t;
    const int x = t.input({B, Ci, H, W}, xv, true);
    const int out = ad::channel_affine(t, x, t.leaf_of(w), t.leaf_of(b));
    const int loss = ad::half_sqnorm(t, out);
    w.zero_grad();
    b.zero_grad();
    t.backward(loss);

    const double h = 1e-6;
    for (std::size_t i = 0; i < w.size(); ++i) {
        auto up = w.value, dn = w.value;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(up, b.value, xv) - loss_value(dn, b.value, xv)) / (2 * h);
        CHECK(w.grad[i] == Catch::Approx(fd).margin(1e-5));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        auto up = b.value, dn = b.value;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(w.value, up, xv) - loss_value(w.value, dn, xv)) / (2 * h);
        CHECK(b.grad[i] == Catch::Approx(fd).margin(1e-5));
    }
    for (std::size_t i = 0; i < xv.size(); ++i) {
        auto up = xv, dn = xv;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(w.value, b.value, up) - loss_value(w.value, b.value, dn)) /
                          (2 * h);
        CHECK(t.grad(x)[i] == Catch::Approx(fd).margin(1e-5));
    }
}

TEST_CASE("spectral conv gradients match finite differences") {
    RngStream rng(7);
    const std::size_t B = 1, C = 2, H = 4, W = 4, modes = 2;
    const std::size_t K1 = ad::retained_axis_freqs(H, modes).size();
    const std::size_t K2 = ad::retained_half_freqs(W, modes).size();
    ad::Param wre("wre", {C, C, K1, K2}), wim("wim", {C, C, K1, K2});
    fill_random(wre.value, rng, 0.3);
    fill_random(wim.value, rng, 0.3);
    std::vector<double> xv(B * C * H * W);
    fill_random(xv, rng);

    auto loss_value = [&](const std::vector<double>& re, const std::vector<double>& im,
                          const std::vector<double>& x_in) {
        Tape t;
        ad::Param r2 = wre, i2 = wim;
        r2.value = re;
        i2.value = im;
        const int x = t.input({B, C, H, W}, x_in, true);
        const int out = ad::spectral_conv(t, x, t.leaf_of(r2), t.leaf_of(i2), modes);
        const int loss = ad::half_sqnorm(t, out);
        return t.value(loss)[0];
    };

    Tape t;
    const int x = t.input({B, C, H, W}, xv, true);
    const int out = ad::spectral_conv(t, x, t.leaf_of(wre), t.leaf_of(wim), modes);
    const int loss = ad::half_sqnorm(t, out);
    wre.zero_grad();
    wim.zero_grad();
    t.backward(loss);

    const double h = 1e-6;
    for (std::size_t i = 0; i < wre.size(); ++i) {
        auto up = wre.value, dn = wre.value;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(up, wim.value, xv) - loss_value(dn, wim.value, xv)) / (2 * h);
        CHECK(wre.grad[i] == Catch::Approx(fd).margin(1e-5));
    }
    for (std::size_t i = 0; i < wim.size(); ++i) {
        auto up = wim.value, dn = wim.value;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(wre.value, up, xv) - loss_value(wre.value, dn, xv)) / (2 * h);
        CHECK(wim.grad[i] == Catch::Approx(fd).margin(1e-5));
    }
    for (std::size_t i = 0; i < xv.size(); ++i) {
        auto up = xv, dn = xv;
        up[i] += h;
        dn[i] -= h;
        const double fd =
            (loss_value(wre.value, wim.value, up) - loss_value(wre.value, wim.value, dn)) / (2 * h);
        CHECK(t.grad(x)[i] == Catch::Approx(fd).margin(1e-5));
    }
}

TEST_CASE("full-budget spectral conv equals direct circular convolution") {
    RngStream rng(11);
    const std::size_t H = 8, W = 8;
    const std::size_t modes = W / 2 + 1;  // full budget
    const std::size_t K1 = ad::retained_axis_freqs(H, modes).size();
    const std::size_t K2 = ad::retained_half_freqs(W, modes).size();
    REQUIRE(K1 == H);
    REQUIRE(K2 == W / 2 + 1);

    ad::Param wre("wre", {1, 1, K1, K2}), wim("wim", {1, 1, K1, K2});
    fill_random(wre.value, rng);
    fill_random(wim.value, rng);
    std::vector<double> xv(H * W);
    fill_random(xv, rng);

    Tape t;
    const int x = t.input({1, 1, H, W}, xv, false);
    const int out = ad::spectral_conv(t, x, t.leaf_of(wre), t.leaf_of(wim), modes);
    const auto& y = t.value(out);

    // Hermitian-extend the stored weights to the full transfer function
    std::vector<ad::cdouble> transfer(H * W, {0.0, 0.0});
    auto k1s = ad::retained_axis_freqs(H, modes);
    auto k2s = ad::retained_half_freqs(W, modes);
    for (std::size_t a1 = 0; a1 < K1; ++a1)
        for (std::size_t a2 = 0; a2 < K2; ++a2) {
            const std::size_t k1 = k1s[a1], k2 = k2s[a2];
            const ad::cdouble w(wre.value[a1 * K2 + a2], wim.value[a1 * K2 + a2]);
            transfer[k1 * W + k2] = w;
            const std::size_t k2m = (W - k2) % W;
            if (k2m != k2) transfer[((H - k1) % H) * W + k2m] = std::conj(w);
        }
    // spatial kernel: g = Re(IFFT(transfer)); direct circular convolution,
    // unitary normalization puts a 1/sqrt(HW) on the product theorem
    std::vector<ad::cdouble> gk = transfer;
    ad::fft2_unitary(gk, H, W, true);
    const double scale = 1.0 / std::sqrt(static_cast<double>(H * W));
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            double acc = 0.0;
            for (std::size_t a = 0; a < H; ++a)
                for (std::size_t b = 0; b < W; ++b) {
                    const std::size_t ia = (i + H - a) % H, jb = (j + W - b) % W;
                    acc += gk[a * W + b].real() * xv[ia * W + jb];
                }
            CHECK(y[i * W + j] == Catch::Approx(scale * acc).margin(1e-8));
        }
}

TEST_CASE("linop_apply and residual_quadform pull back through the adjoint") {
    RngStream rng(13);
    const FieldShape dom{1, 2, 2};
    std::vector<double> entries(3 * dom.size());
    fill_random(entries, rng);
    DenseMatrixOperator A(dom, 3, entries);
    auto gamma = CovarianceOperator::diagonal({0.5, 1.0, 2.0});
    std::vector<double> y{0.3, -0.7, 1.1};
    std::vector<double> xv(2 * dom.size());
    fill_random(xv, rng);

    auto loss_value = [&](const std::vector<double>& x_in) {
        Tape t;
        const int x = t.input({2, 1, 2, 2}, x_in, true);
        const int ypred = ad::linop_apply(t, x, A);
        const int loss = ad::residual_quadform(t, ypred, y, gamma);
        return t.value(loss)[0];
    };

    Tape t;
    const int x = t.input({2, 1, 2, 2}, xv, true);
    const int ypred = ad::linop_apply(t, x, A);
    const int loss = ad::residual_quadform(t, ypred, y, gamma);
    t.backward(loss);

    const double h = 1e-6;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        auto up = xv, dn = xv;
        up[i] += h;
        dn[i] -= h;
        const double fd = (loss_value(up) - loss_value(dn)) / (2 * h);
        CHECK(t.grad(x)[i] == Catch::Approx(fd).margin(1e-5));
    }
}

TEST_CASE("weighted mse matches manual computation and gradient") {
    Tape t;
    std::vector<double> pv{1.0, 2.0, 3.0, 4.0};
    std::vector<double> tgt{0.5, 2.5, 2.0, 5.0};
    std::vector<double> wts{2.0, 0.5};
    const int p = t.input({2, 1, 1, 2}, pv, true);
    const int loss = ad::weighted_mse(t, p, tgt, wts);
    double manual = 0.0;
    manual += 2.0 * (0.25 + 0.25);
    manual += 0.5 * (1.0 + 1.0);
    manual /= 4.0;
    CHECK(t.value(loss)[0] == Catch::Approx(manual));
    t.backward(loss);
    CHECK(t.grad(p)[0] == Catch::Approx(2.0 * 2.0 * 0.5 / 4.0));
    CHECK(t.grad(p)[2] == Catch::Approx(2.0 * 0.5 * 1.0 / 4.0));
}
