#ifndef SBDOT_AD_FFT_HPP
#define SBDOT_AD_FFT_HPP

#include <complex>
#include <cstddef>
#include <unsupported/Eigen/FFT>
#include <vector>

namespace sbdot::ad {

using cdouble = std::complex<double>;

namespace detail {

// Unnormalized forward DFT rows+cols. Eigen's FFT (kissfft backend) caches
// plans per length inside the thread-local instance.
inline void dft2_forward_raw(std::vector<cdouble>& a, std::size_t H, std::size_t W) {
    thread_local Eigen::FFT<double> fft;
    std::vector<cdouble> in(std::max(H, W)), out(std::max(H, W));
    for (std::size_t r = 0; r < H; ++r) {
        in.assign(a.begin() + static_cast<std::ptrdiff_t>(r * W),
                  a.begin() + static_cast<std::ptrdiff_t>((r + 1) * W));
        in.resize(W);
        out.resize(W);
        fft.fwd(out, in);
        std::copy(out.begin(), out.end(), a.begin() + static_cast<std::ptrdiff_t>(r * W));
    }
    in.resize(H);
    out.resize(H);
    for (std::size_t c = 0; c < W; ++c) {
        for (std::size_t r = 0; r < H; ++r) in[r] = a[r * W + c];
        fft.fwd(out, in);
        for (std::size_t r = 0; r < H; ++r) a[r * W + c] = out[r];
    }
}

}  // namespace detail

/// Unitary 2D DFT (scaling 1/sqrt(HW) in both directions), in place.
/// The inverse is realized as conj(F(conj(x)))/sqrt(HW), so only the forward
/// kernel is used and F^H is the exact adjoint of F.
inline void fft2_unitary(std::vector<cdouble>& a, std::size_t H, std::size_t W,
                         bool inverse = false) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(H * W));
    if (inverse)
        for (auto& z : a) z = std::conj(z);
    detail::dft2_forward_raw(a, H, W);
    if (inverse)
        for (auto& z : a) z = std::conj(z) * scale;
    else
        for (auto& z : a) z *= scale;
}

inline std::vector<cdouble> fft2_of_real(const double* x, std::size_t H, std::size_t W) {
    std::vector<cdouble> a(H * W);
    for (std::size_t i = 0; i < H * W; ++i) a[i] = cdouble(x[i], 0.0);
    fft2_unitary(a, H, W, false);
    return a;
}

}  // namespace sbdot::ad

#endif
