#ifndef SBDOT_AD_TAPE_HPP
#define SBDOT_AD_TAPE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sbdot/ad/fft.hpp"
#include "sbdot/core.hpp"
#include "sbdot/covariance.hpp"
#include "sbdot/linear_operator.hpp"

namespace sbdot::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Trainable tensor with AdamW moment buffers. Lives outside any tape;
/// gradients accumulate into `grad` when a tape's backward pass finishes.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m, v;  // optimizer moments, sized on first use

    Param() = default;
    Param(std::string nm, Shape sh)
        : name(std::move(nm)),
          shape(std::move(sh)),
          value(numel(shape), 0.0),
          grad(numel(shape), 0.0) {}

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Reverse-mode tape over dense tensor operations. Values are computed
/// eagerly; each op registers a closure that routes the output cotangent to
/// its inputs. One tape per forward pass; freed when it goes out of scope.
class Tape {
  public:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        bool needs_grad = false;
    };

    int input(Shape shape, std::vector<double> data, bool needs_grad = false) {
        if (data.size() != numel(shape)) throw DimensionError("tape input: size mismatch");
        nodes_.push_back(Node{std::move(shape), std::move(data), {}, needs_grad});
        return static_cast<int>(nodes_.size() - 1);
    }

    int leaf_of(Param& p) {
        nodes_.push_back(Node{p.shape, p.value, {}, true});
        const int id = static_cast<int>(nodes_.size() - 1);
        param_leaves_.emplace_back(id, &p);
        return id;
    }

    int make(Shape shape, std::vector<double> val, bool needs_grad) {
        nodes_.push_back(Node{std::move(shape), std::move(val), {}, needs_grad});
        return static_cast<int>(nodes_.size() - 1);
    }

    /// Register the pullback of node `id`; runs only if `id` received a cotangent.
    void push_backward(int id, std::function<void(Tape&)> fn) {
        if (node(id).needs_grad) backward_ops_.emplace_back(id, std::move(fn));
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const std::vector<double>& value(int id) const { return node(id).val; }
    const std::vector<double>& grad(int id) const { return node(id).grad; }
    const Shape& shape(int id) const { return node(id).shape; }
    bool needs_grad(int id) const { return node(id).needs_grad; }

    std::vector<double>& grad_buf(int id) {
        Node& n = node(id);
        if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
        return n.grad;
    }

    /// Reverse pass from a scalar node. With accumulate_params (the default)
    /// the leaf gradients are added into their Params; pass false when only
    /// input gradients are wanted (keeps concurrent evaluations read-only on
    /// the shared parameters).
    void backward(int loss_id, bool accumulate_params = true) {
        Node& loss = node(loss_id);
        if (loss.val.size() != 1) throw Error("backward: loss must be scalar");
        if (!loss.needs_grad) throw Error("backward: loss does not depend on any gradient leaf");
        grad_buf(loss_id)[0] = 1.0;
        for (auto it = backward_ops_.rbegin(); it != backward_ops_.rend(); ++it) {
            if (!node(it->first).grad.empty()) it->second(*this);
        }
        if (!accumulate_params) return;
        for (auto& [id, p] : param_leaves_) {
            Node& n = node(id);
            if (n.grad.empty()) continue;
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += n.grad[i];
        }
    }

  private:
    std::vector<Node> nodes_;
    std::vector<std::pair<int, std::function<void(Tape&)>>> backward_ops_;
    std::vector<std::pair<int, Param*>> param_leaves_;
};

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline int add(Tape& t, int a, int b) {
    if (t.shape(a) != t.shape(b)) throw DimensionError("ad add: shape mismatch");
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    const int id = t.make(t.shape(a), std::move(out), t.needs_grad(a) || t.needs_grad(b));
    t.push_backward(id, [id, a, b](Tape& tp) {
        const auto& g = tp.grad(id);
        if (tp.needs_grad(a)) {
            auto& ga = tp.grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tp.needs_grad(b)) {
            auto& gb = tp.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return id;
}

/// out = alpha * a + beta * b (shapes equal).
inline int axpby(Tape& t, double alpha, int a, double beta, int b) {
    if (t.shape(a) != t.shape(b)) throw DimensionError("ad axpby: shape mismatch");
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * av[i] + beta * bv[i];
    const int id = t.make(t.shape(a), std::move(out), t.needs_grad(a) || t.needs_grad(b));
    t.push_backward(id, [id, a, b, alpha, beta](Tape& tp) {
        const auto& g = tp.grad(id);
        if (tp.needs_grad(a)) {
            auto& ga = tp.grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
        }
        if (tp.needs_grad(b)) {
            auto& gb = tp.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += beta * g[i];
        }
    });
    return id;
}

inline int scale(Tape& t, int a, double alpha) {
    const auto& av = t.value(a);
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * av[i];
    const int id = t.make(t.shape(a), std::move(out), t.needs_grad(a));
    t.push_backward(id, [id, a, alpha](Tape& tp) {
        const auto& g = tp.grad(id);
        auto& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
    });
    return id;
}

enum class Act { silu, gelu, tanh_act, identity };

inline Act act_from_string(const std::string& s) {
    if (s == "silu") return Act::silu;
    if (s == "gelu") return Act::gelu;
    if (s == "tanh") return Act::tanh_act;
    if (s == "identity" || s == "none") return Act::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

inline std::string act_to_string(Act a) {
    switch (a) {
        case Act::silu: return "silu";
        case Act::gelu: return "gelu";
        case Act::tanh_act: return "tanh";
        case Act::identity: return "identity";
    }
    return "silu";
}

inline int activation(Tape& t, int a, Act kind) {
    if (kind == Act::identity) return a;
    const auto& av = t.value(a);
    std::vector<double> out(av.size());
    switch (kind) {
        case Act::silu:
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-av[i]));
                out[i] = av[i] * s;
            }
            break;
        case Act::gelu:
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] / std::sqrt(2.0)));
            break;
        case Act::tanh_act:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
            break;
        case Act::identity: break;
    }
    const int id = t.make(t.shape(a), std::move(out), t.needs_grad(a));
    t.push_backward(id, [id, a, kind](Tape& tp) {
        const auto& g = tp.grad(id);
        const auto& x = tp.value(a);
        auto& ga = tp.grad_buf(a);
        switch (kind) {
            case Act::silu:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-x[i]));
                    ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
                }
                break;
            case Act::gelu:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
                    const double pdf =
                        std::exp(-0.5 * x[i] * x[i]) / std::sqrt(2.0 * M_PI);
                    ga[i] += g[i] * (cdf + x[i] * pdf);
                }
                break;
            case Act::tanh_act:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double th = std::tanh(x[i]);
                    ga[i] += g[i] * (1.0 - th * th);
                }
                break;
            case Act::identity: break;
        }
    });
    return id;
}

// ---------------------------------------------------------------------------
// Channel-mixing ops on [B, C, H, W] tensors
// ---------------------------------------------------------------------------

/// Pointwise affine over channels: out[b,o,p] = sum_i w[o,i] x[b,i,p] + bias[o].
inline int channel_affine(Tape& t, int x, int w, int bias) {
    const Shape& xs = t.shape(x);
    const Shape& ws = t.shape(w);
    if (xs.size() != 4 || ws.size() != 2 || ws[1] != xs[1])
        throw DimensionError("channel_affine: bad shapes");
    const std::size_t B = xs[0], Ci = xs[1], P = xs[2] * xs[3], Co = ws[0];
    if (t.shape(bias) != Shape{Co}) throw DimensionError("channel_affine: bias shape");
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const auto& bv = t.value(bias);
    std::vector<double> out(B * Co * P);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o) {
            double* op = out.data() + (b * Co + o) * P;
            const double b0 = bv[o];
            for (std::size_t p = 0; p < P; ++p) op[p] = b0;
            for (std::size_t i = 0; i < Ci; ++i) {
                const double wij = wv[o * Ci + i];
                if (wij == 0.0) continue;
                const double* xp = xv.data() + (b * Ci + i) * P;
                for (std::size_t p = 0; p < P; ++p) op[p] += wij * xp[p];
            }
        }
    const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(bias);
    const int id = t.make({B, Co, xs[2], xs[3]}, std::move(out), ng);
    t.push_backward(id, [id, x, w, bias, B, Ci, Co, P](Tape& tp) {
        const auto& g = tp.grad(id);
        const auto& xv2 = tp.value(x);
        const auto& wv2 = tp.value(w);
        if (tp.needs_grad(x)) {
            auto& gx = tp.grad_buf(x);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < Ci; ++i) {
                    double* gxp = gx.data() + (b * Ci + i) * P;
                    for (std::size_t o = 0; o < Co; ++o) {
                        const double wij = wv2[o * Ci + i];
                        if (wij == 0.0) continue;
                        const double* gp = g.data() + (b * Co + o) * P;
                        for (std::size_t p = 0; p < P; ++p) gxp[p] += wij * gp[p];
                    }
                }
        }
        if (tp.needs_grad(w)) {
            auto& gw = tp.grad_buf(w);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Co; ++o) {
                    const double* gp = g.data() + (b * Co + o) * P;
                    for (std::size_t i = 0; i < Ci; ++i) {
                        const double* xp = xv2.data() + (b * Ci + i) * P;
                        double s = 0.0;
                        for (std::size_t p = 0; p < P; ++p) s += gp[p] * xp[p];
                        gw[o * Ci + i] += s;
                    }
                }
        }
        if (tp.needs_grad(bias)) {
            auto& gb = tp.grad_buf(bias);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Co; ++o) {
                    const double* gp = g.data() + (b * Co + o) * P;
                    double s = 0.0;
                    for (std::size_t p = 0; p < P; ++p) s += gp[p];
                    gb[o] += s;
                }
        }
    });
    return id;
}

/// Lifting layer with fixed auxiliary channels (time broadcast, coordinate
/// maps):
/// out[b,o,p] = sum_i w[o,i] x[b,i,p] + sum_e w[o,Ci+e] aux[b][e*P+p] + bias[o],
/// where w has shape [Co, Ci+E] and aux[b] holds E constant per-pixel maps for
/// sample b. The auxiliary channels carry no gradient.
inline int lift_with_aux(Tape& t, int x, int w, int bias,
                         std::shared_ptr<const std::vector<std::vector<double>>> aux) {
    const Shape& xs = t.shape(x);
    const Shape& ws = t.shape(w);
    if (xs.size() != 4 || ws.size() != 2 || ws[1] < xs[1])
        throw DimensionError("lift_with_aux: bad shapes");
    const std::size_t B = xs[0], Ci = xs[1], P = xs[2] * xs[3], Co = ws[0];
    const std::size_t E = ws[1] - Ci;
    if (aux->size() != B) throw DimensionError("lift_with_aux: aux batch size mismatch");
    for (const auto& a : *aux)
        if (a.size() != E * P) throw DimensionError("lift_with_aux: aux channel size mismatch");
    if (t.shape(bias) != Shape{Co}) throw DimensionError("lift_with_aux: bias shape");
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const auto& bv = t.value(bias);
    std::vector<double> out(B * Co * P);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o) {
            double* op = out.data() + (b * Co + o) * P;
            const double b0 = bv[o];
            for (std::size_t p = 0; p < P; ++p) op[p] = b0;
            for (std::size_t i = 0; i < Ci; ++i) {
                const double wij = wv[o * (Ci + E) + i];
                const double* xp = xv.data() + (b * Ci + i) * P;
                for (std::size_t p = 0; p < P; ++p) op[p] += wij * xp[p];
            }
            for (std::size_t e = 0; e < E; ++e) {
                const double wie = wv[o * (Ci + E) + Ci + e];
                const double* ap = (*aux)[b].data() + e * P;
                for (std::size_t p = 0; p < P; ++p) op[p] += wie * ap[p];
            }
        }
    const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(bias);
    const int id = t.make({B, Co, xs[2], xs[3]}, std::move(out), ng);
    t.push_backward(id, [id, x, w, bias, B, Ci, E, Co, P, aux](Tape& tp) {
        const auto& g = tp.grad(id);
        const auto& xv2 = tp.value(x);
        const auto& wv2 = tp.value(w);
        if (tp.needs_grad(x)) {
            auto& gx = tp.grad_buf(x);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < Ci; ++i) {
                    double* gxp = gx.data() + (b * Ci + i) * P;
                    for (std::size_t o = 0; o < Co; ++o) {
                        const double wij = wv2[o * (Ci + E) + i];
                        const double* gp = g.data() + (b * Co + o) * P;
                        for (std::size_t p = 0; p < P; ++p) gxp[p] += wij * gp[p];
                    }
                }
        }
        if (tp.needs_grad(w)) {
            auto& gw = tp.grad_buf(w);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Co; ++o) {
                    const double* gp = g.data() + (b * Co + o) * P;
                    for (std::size_t i = 0; i < Ci; ++i) {
                        const double* xp = xv2.data() + (b * Ci + i) * P;
                        double s = 0.0;
                        for (std::size_t p = 0; p < P; ++p) s += gp[p] * xp[p];
                        gw[o * (Ci + E) + i] += s;
                    }
                    for (std::size_t e = 0; e < E; ++e) {
                        const double* ap = (*aux)[b].data() + e * P;
                        double s = 0.0;
                        for (std::size_t p = 0; p < P; ++p) s += gp[p] * ap[p];
                        gw[o * (Ci + E) + Ci + e] += s;
                    }
                }
        }
        if (tp.needs_grad(bias)) {
            auto& gb = tp.grad_buf(bias);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Co; ++o) {
                    const double* gp = g.data() + (b * Co + o) * P;
                    double s = 0.0;
                    for (std::size_t p = 0; p < P; ++p) s += gp[p];
                    gb[o] += s;
                }
        }
    });
    return id;
}

// ---------------------------------------------------------------------------
// Spectral convolution
// ---------------------------------------------------------------------------

/// Frequencies along an axis of length n retained at a mode budget: all k with
/// min(k, n - k) < modes, ascending. A budget of n/2 + 1 (or more) keeps the
/// whole axis.
inline std::vector<std::size_t> retained_axis_freqs(std::size_t n, std::size_t modes) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < n; ++k)
        if (std::min(k, n - k) < modes) ks.push_back(k);
    return ks;
}

/// Half-spectrum frequencies (k <= n/2) retained along the last axis.
inline std::vector<std::size_t> retained_half_freqs(std::size_t n, std::size_t modes) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k <= n / 2; ++k)
        if (std::min(k, n - k) < modes) ks.push_back(k);
    return ks;
}

/// Spectral convolution layer: per retained low-frequency mode, a dense complex
/// channel-mixing matrix applied in Fourier space. Weights are stored on the
/// half spectrum (last axis k2 <= W/2) and extended by Hermitian symmetry, so
/// the layer is linear over real fields and outputs real fields.
///   out[b,o] = Re( IFFT( sum_i Wext[o,i] .* FFT(x[b,i]) ) )
/// wre/wim have shape [Co, Ci, K1, K2] with K1 = |retained_axis_freqs(H)| and
/// K2 = |retained_half_freqs(W)|.
inline int spectral_conv(Tape& t, int x, int wre, int wim, std::size_t modes) {
    const Shape& xs = t.shape(x);
    if (xs.size() != 4) throw DimensionError("spectral_conv: input must be [B,C,H,W]");
    const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    const auto k1s = retained_axis_freqs(H, modes);
    const auto k2s = retained_half_freqs(W, modes);
    const std::size_t K1 = k1s.size(), K2 = k2s.size();
    const Shape& ws = t.shape(wre);
    if (ws.size() != 4 || ws[1] != Ci || ws[2] != K1 || ws[3] != K2)
        throw DimensionError("spectral_conv: weight shape mismatch");
    if (t.shape(wim) != ws) throw DimensionError("spectral_conv: wre/wim shapes differ");
    const std::size_t Co = ws[0];

    const auto& xv = t.value(x);
    const auto& wrev = t.value(wre);
    const auto& wimv = t.value(wim);

    // forward FFT of every input channel; kept for the weight pullback
    auto spectra = std::make_shared<std::vector<cdouble>>(B * Ci * H * W);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Ci; ++i) {
            auto s = fft2_of_real(xv.data() + (b * Ci + i) * H * W, H, W);
            std::copy(s.begin(), s.end(), spectra->begin() +
                                              static_cast<std::ptrdiff_t>((b * Ci + i) * H * W));
        }

    std::vector<double> out(B * Co * H * W);
    std::vector<cdouble> acc(H * W);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o) {
            std::fill(acc.begin(), acc.end(), cdouble(0.0, 0.0));
            for (std::size_t i = 0; i < Ci; ++i) {
                const cdouble* X = spectra->data() + (b * Ci + i) * H * W;
                for (std::size_t a1 = 0; a1 < K1; ++a1) {
                    const std::size_t k1 = k1s[a1];
                    const std::size_t k1m = (H - k1) % H;
                    for (std::size_t a2 = 0; a2 < K2; ++a2) {
                        const std::size_t k2 = k2s[a2];
                        const std::size_t widx = ((o * Ci + i) * K1 + a1) * K2 + a2;
                        const cdouble w(wrev[widx], wimv[widx]);
                        acc[k1 * W + k2] += w * X[k1 * W + k2];
                        const std::size_t k2m = (W - k2) % W;
                        if (k2m != k2)
                            acc[k1m * W + k2m] += std::conj(w) * X[k1m * W + k2m];
                    }
                }
            }
            fft2_unitary(acc, H, W, /*inverse=*/true);
            double* op = out.data() + (b * Co + o) * H * W;
            for (std::size_t p = 0; p < H * W; ++p) op[p] = acc[p].real();
        }

    const bool ng = t.needs_grad(x) || t.needs_grad(wre) || t.needs_grad(wim);
    const int id = t.make({B, Co, H, W}, std::move(out), ng);
    t.push_backward(id, [id, x, wre, wim, B, Ci, Co, H, W, k1s, k2s, spectra](Tape& tp) {
        const std::size_t K1 = k1s.size(), K2 = k2s.size();
        const auto& g = tp.grad(id);
        const auto& wrev2 = tp.value(wre);
        const auto& wimv2 = tp.value(wim);
        const bool want_x = tp.needs_grad(x);
        const bool want_w = tp.needs_grad(wre) || tp.needs_grad(wim);

        // cotangent spectra of the outputs
        std::vector<cdouble> ghat(B * Co * H * W);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Co; ++o) {
                auto s = fft2_of_real(g.data() + (b * Co + o) * H * W, H, W);
                std::copy(s.begin(), s.end(),
                          ghat.begin() + static_cast<std::ptrdiff_t>((b * Co + o) * H * W));
            }

        std::vector<cdouble> xhat(H * W);
        double* gwre = nullptr;
        double* gwim = nullptr;
        if (want_w) {
            gwre = tp.grad_buf(wre).data();
            gwim = tp.grad_buf(wim).data();
        }
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < Ci; ++i) {
                if (want_x) std::fill(xhat.begin(), xhat.end(), cdouble(0.0, 0.0));
                const cdouble* X = spectra->data() + (b * Ci + i) * H * W;
                for (std::size_t o = 0; o < Co; ++o) {
                    const cdouble* Gh = ghat.data() + (b * Co + o) * H * W;
                    for (std::size_t a1 = 0; a1 < K1; ++a1) {
                        const std::size_t k1 = k1s[a1];
                        const std::size_t k1m = (H - k1) % H;
                        for (std::size_t a2 = 0; a2 < K2; ++a2) {
                            const std::size_t k2 = k2s[a2];
                            const std::size_t k2m = (W - k2) % W;
                            const std::size_t widx = ((o * Ci + i) * K1 + a1) * K2 + a2;
                            const cdouble w(wrev2[widx], wimv2[widx]);
                            const cdouble gh = Gh[k1 * W + k2];
                            if (want_x) xhat[k1 * W + k2] += std::conj(w) * gh;
                            if (want_w) {
                                const cdouble gd = std::conj(gh) * X[k1 * W + k2];
                                gwre[widx] += gd.real();
                                gwim[widx] -= gd.imag();
                            }
                            if (k2m != k2) {
                                const cdouble ghm = Gh[k1m * W + k2m];
                                if (want_x) xhat[k1m * W + k2m] += w * ghm;
                                if (want_w) {
                                    const cdouble gdm = std::conj(ghm) * X[k1m * W + k2m];
                                    gwre[widx] += gdm.real();
                                    gwim[widx] += gdm.imag();
                                }
                            }
                        }
                    }
                }
                if (want_x) {
                    std::vector<cdouble> tmp = xhat;
                    fft2_unitary(tmp, H, W, /*inverse=*/true);
                    auto& gx = tp.grad_buf(x);
                    double* gxp = gx.data() + (b * Ci + i) * H * W;
                    for (std::size_t p = 0; p < H * W; ++p) gxp[p] += tmp[p].real();
                }
            }
    });
    return id;
}

// ---------------------------------------------------------------------------
// Losses and couplings to linear algebra
// ---------------------------------------------------------------------------

/// Weighted mean squared error over a batch:
/// loss = (1/(B*P)) sum_b w_b ||pred_b - target_b||^2.
inline int weighted_mse(Tape& t, int pred, const std::vector<double>& target,
                        const std::vector<double>& batch_weights) {
    const Shape& ps = t.shape(pred);
    const std::size_t B = ps[0];
    const std::size_t P = numel(ps) / B;
    if (target.size() != numel(ps)) throw DimensionError("weighted_mse: target size mismatch");
    if (batch_weights.size() != B) throw DimensionError("weighted_mse: weight count mismatch");
    const auto& pv = t.value(pred);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            const double d = pv[b * P + p] - target[b * P + p];
            s += d * d;
        }
        loss += batch_weights[b] * s;
    }
    loss /= static_cast<double>(B * P);
    const int id = t.make({1}, {loss}, t.needs_grad(pred));
    t.push_backward(id, [id, pred, target, batch_weights, B, P](Tape& tp) {
        const double gs = tp.grad(id)[0] * 2.0 / static_cast<double>(B * P);
        const auto& pv2 = tp.value(pred);
        auto& gp = tp.grad_buf(pred);
        for (std::size_t b = 0; b < B; ++b) {
            const double wb = gs * batch_weights[b];
            for (std::size_t p = 0; p < P; ++p)
                gp[b * P + p] += wb * (pv2[b * P + p] - target[b * P + p]);
        }
    });
    return id;
}

/// Apply a LinearOperator to each batch element of a field-shaped tensor
/// [B, C, H, W] -> [B, m]. The operator must outlive the tape.
inline int linop_apply(Tape& t, int x, const LinearOperator& A) {
    const Shape& xs = t.shape(x);
    if (xs.size() != 4) throw DimensionError("linop_apply: input must be [B,C,H,W]");
    const FieldShape fs{xs[1], xs[2], xs[3]};
    if (!(fs == A.domain_shape())) throw DimensionError("linop_apply: operator domain mismatch");
    const std::size_t B = xs[0], n = fs.size(), m = A.codomain_dim();
    const auto& xv = t.value(x);
    std::vector<double> out(B * m);
    Field tmp(fs);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy(xv.begin() + static_cast<std::ptrdiff_t>(b * n),
                  xv.begin() + static_cast<std::ptrdiff_t>((b + 1) * n), tmp.v.begin());
        auto y = A.apply(tmp);
        std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(b * m));
    }
    const int id = t.make({B, m}, std::move(out), t.needs_grad(x));
    t.push_backward(id, [id, x, &A, B, n, m](Tape& tp) {
        const auto& g = tp.grad(id);
        auto& gx = tp.grad_buf(x);
        for (std::size_t b = 0; b < B; ++b) {
            std::vector<double> gy(g.begin() + static_cast<std::ptrdiff_t>(b * m),
                                   g.begin() + static_cast<std::ptrdiff_t>((b + 1) * m));
            Field gf = A.apply_adjoint(gy);
            for (std::size_t i = 0; i < n; ++i) gx[b * n + i] += gf.v[i];
        }
    });
    return id;
}

/// Covariance-weighted residual energy summed over the batch:
/// loss = sum_b (y - pred_b)^T Gamma^{-1} (y - pred_b), pred shape [B, m].
inline int residual_quadform(Tape& t, int pred, const std::vector<double>& y,
                             const CovarianceOperator& gamma) {
    const Shape& ps = t.shape(pred);
    if (ps.size() != 2) throw DimensionError("residual_quadform: pred must be [B, m]");
    const std::size_t B = ps[0], m = ps[1];
    if (y.size() != m || gamma.dim() != m)
        throw DimensionError("residual_quadform: data/covariance size mismatch");
    const auto& pv = t.value(pred);
    auto ginv_r = std::make_shared<std::vector<double>>(B * m);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(m));
        for (std::size_t i = 0; i < m; ++i)
            r[static_cast<Eigen::Index>(i)] = y[i] - pv[b * m + i];
        Eigen::VectorXd gr = gamma.solve(r);
        for (std::size_t i = 0; i < m; ++i)
            (*ginv_r)[b * m + i] = gr[static_cast<Eigen::Index>(i)];
        loss += r.dot(gr);
    }
    const int id = t.make({1}, {loss}, t.needs_grad(pred));
    t.push_backward(id, [id, pred, ginv_r, B, m](Tape& tp) {
        const double gs = tp.grad(id)[0];
        auto& gp = tp.grad_buf(pred);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < m; ++i)
                gp[b * m + i] += -2.0 * gs * (*ginv_r)[b * m + i];
    });
    return id;
}

/// Plain scalar: loss = 0.5 ||x||^2 (used in tests).
inline int half_sqnorm(Tape& t, int x) {
    const auto& xv = t.value(x);
    double s = 0.0;
    for (double v : xv) s += v * v;
    const int id = t.make({1}, {0.5 * s}, t.needs_grad(x));
    t.push_backward(id, [id, x](Tape& tp) {
        const double gs = tp.grad(id)[0];
        const auto& xv2 = tp.value(x);
        auto& gx = tp.grad_buf(x);
        for (std::size_t i = 0; i < xv2.size(); ++i) gx[i] += gs * xv2[i];
    });
    return id;
}

}  // namespace sbdot::ad

#endif
