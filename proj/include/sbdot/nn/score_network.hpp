#ifndef SBDOT_NN_SCORE_NETWORK_HPP
#define SBDOT_NN_SCORE_NETWORK_HPP

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "sbdot/ad/tape.hpp"
#include "sbdot/core.hpp"
#include "sbdot/matrix_io.hpp"
#include "sbdot/rng.hpp"

namespace sbdot {

struct NetworkConfig {
    std::size_t channels = 2;   // field channels (network input adds a time channel)
    std::size_t width = 32;     // lifted channel count
    std::size_t depth = 10;     // number of spectral blocks
    std::size_t n_modes = 17;   // retained frequency budget per axis
    ad::Act activation = ad::Act::silu;

    /// Reduced profile for fast CPU runs and CI.
    static NetworkConfig reduced(std::size_t channels = 2) {
        NetworkConfig c;
        c.channels = channels;
        c.width = 16;
        c.depth = 4;
        c.n_modes = 8;
        return c;
    }
};

/// Field-to-field map r(x, t): lift (with broadcast time channel), a stack of
/// spectral blocks with pointwise-linear skip paths, then a two-layer
/// pointwise projection back to the field channels.
class ScoreNetwork {
  public:
    ScoreNetwork(NetworkConfig cfg, FieldShape field_shape, std::uint64_t init_seed)
        : cfg_(cfg), shape_(field_shape) {
        if (field_shape.channels != cfg.channels)
            throw DimensionError("ScoreNetwork: config channels do not match field shape");
        k1_ = ad::retained_axis_freqs(shape_.height, cfg_.n_modes).size();
        k2_ = ad::retained_half_freqs(shape_.width, cfg_.n_modes).size();
        build_coord_maps();
        build_params();
        init_params(init_seed);
    }

    const NetworkConfig& config() const { return cfg_; }
    const FieldShape& field_shape() const { return shape_; }

    std::vector<ad::Param*> parameters() {
        std::vector<ad::Param*> ps;
        ps.reserve(params_.size());
        for (auto& p : params_) ps.push_back(&p);
        return ps;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Build the forward graph on a tape. `x` is a [B, C, H, W] node; `times`
    /// holds the per-sample raw time. The lift sees three auxiliary channels:
    /// the broadcast time and the normalized x/y coordinate maps (the spectral
    /// blocks are translation-equivariant, so positional targets need them).
    int forward(ad::Tape& t, int x, const std::vector<double>& times) {
        const auto& xs = t.shape(x);
        if (xs.size() != 4 || xs[1] != shape_.channels || xs[2] != shape_.height ||
            xs[3] != shape_.width)
            throw DimensionError("ScoreNetwork forward: input shape mismatch");
        if (times.size() != xs[0])
            throw DimensionError("ScoreNetwork forward: times size != batch");
        auto aux = std::make_shared<std::vector<std::vector<double>>>();
        aux->reserve(xs[0]);
        for (double tb : times) {
            std::vector<double> a = coord_maps_;
            std::fill(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(pixels()), tb);
            aux->push_back(std::move(a));
        }
        int h = ad::lift_with_aux(t, x, t.leaf_of(p_lift_w()), t.leaf_of(p_lift_b()),
                                  std::move(aux));
        for (std::size_t l = 0; l < cfg_.depth; ++l) {
            int spec = ad::spectral_conv(t, h, t.leaf_of(p_spec_re(l)), t.leaf_of(p_spec_im(l)),
                                         cfg_.n_modes);
            int skip = ad::channel_affine(t, h, t.leaf_of(p_skip_w(l)), t.leaf_of(p_skip_b(l)));
            h = ad::activation(t, ad::add(t, spec, skip), cfg_.activation);
        }
        int p1 = ad::channel_affine(t, h, t.leaf_of(p_proj1_w()), t.leaf_of(p_proj1_b()));
        int a1 = ad::activation(t, p1, cfg_.activation);
        return ad::channel_affine(t, a1, t.leaf_of(p_proj2_w()), t.leaf_of(p_proj2_b()));
    }

    /// Inference on a batch of fields at one shared time.
    std::vector<Field> eval(const std::vector<Field>& xs, double t_raw) {
        if (xs.empty()) return {};
        ad::Tape tape;
        const int x = tape.input(batch_shape(xs.size()), pack(xs), /*needs_grad=*/false);
        const int out = forward(tape, x, std::vector<double>(xs.size(), t_raw));
        return unpack(tape.value(out), xs.size());
    }

    Field eval_one(const Field& x, double t_raw) { return eval({x}, t_raw)[0]; }

    ad::Shape batch_shape(std::size_t b) const {
        return {b, shape_.channels, shape_.height, shape_.width};
    }

    std::vector<double> pack(const std::vector<Field>& xs) const {
        std::vector<double> v;
        v.reserve(xs.size() * shape_.size());
        for (const auto& f : xs) {
            if (!(f.shape == shape_))
                throw DimensionError("ScoreNetwork: field shape mismatch in batch");
            v.insert(v.end(), f.v.begin(), f.v.end());
        }
        return v;
    }

    std::vector<Field> unpack(const std::vector<double>& v, std::size_t b) const {
        std::vector<Field> fs;
        fs.reserve(b);
        const std::size_t n = shape_.size();
        for (std::size_t i = 0; i < b; ++i)
            fs.emplace_back(shape_, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(
                                                                        i * n),
                                                        v.begin() + static_cast<std::ptrdiff_t>(
                                                                        (i + 1) * n)));
        return fs;
    }

    // Named parameter accessors (canonical checkpoint order is params_ order).
    ad::Param& p_lift_w() { return params_[0]; }
    ad::Param& p_lift_b() { return params_[1]; }
    ad::Param& p_spec_re(std::size_t l) { return params_[2 + 4 * l]; }
    ad::Param& p_spec_im(std::size_t l) { return params_[3 + 4 * l]; }
    ad::Param& p_skip_w(std::size_t l) { return params_[4 + 4 * l]; }
    ad::Param& p_skip_b(std::size_t l) { return params_[5 + 4 * l]; }
    ad::Param& p_proj1_w() { return params_[2 + 4 * cfg_.depth]; }
    ad::Param& p_proj1_b() { return params_[3 + 4 * cfg_.depth]; }
    ad::Param& p_proj2_w() { return params_[4 + 4 * cfg_.depth]; }
    ad::Param& p_proj2_b() { return params_[5 + 4 * cfg_.depth]; }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open " + path + " for writing");
        static constexpr char magic[7] = {'S', 'P', 'N', 'E', 'T', '1', '\0'};
        detail::write_bytes(os, magic, sizeof(magic));
        const char version = 1;
        detail::write_bytes(os, &version, 1);
        detail::write_u32(os, static_cast<std::uint32_t>(cfg_.width));
        detail::write_u32(os, static_cast<std::uint32_t>(cfg_.depth));
        detail::write_u32(os, static_cast<std::uint32_t>(cfg_.n_modes));
        detail::write_u32(os, static_cast<std::uint32_t>(cfg_.channels));
        for (const auto& p : params_)
            detail::write_bytes(os, p.value.data(), p.value.size() * sizeof(double));
    }

    /// The architecture header pins (width, depth, modes, channels); the grid
    /// comes from the caller, which knows the field it will evaluate on.
    static ScoreNetwork load(const std::string& path, FieldShape field_shape,
                             ad::Act activation = ad::Act::silu) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open " + path);
        char magic[7];
        detail::read_bytes(is, magic, sizeof(magic));
        static constexpr char want[7] = {'S', 'P', 'N', 'E', 'T', '1', '\0'};
        if (std::memcmp(magic, want, sizeof(magic)) != 0)
            throw IoError(path + ": not a SPNET1 checkpoint");
        char version;
        detail::read_bytes(is, &version, 1);
        if (version != 1) throw IoError(path + ": unsupported checkpoint version");
        NetworkConfig cfg;
        cfg.width = detail::read_u32(is);
        cfg.depth = detail::read_u32(is);
        cfg.n_modes = detail::read_u32(is);
        cfg.channels = detail::read_u32(is);
        cfg.activation = activation;
        ScoreNetwork net(cfg, field_shape, /*init_seed=*/0);
        for (auto& p : net.params_)
            detail::read_bytes(is, p.value.data(), p.value.size() * sizeof(double));
        return net;
    }

  private:
    std::size_t pixels() const { return shape_.height * shape_.width; }

    void build_coord_maps() {
        // slot 0: time (filled per batch); slots 1, 2: x and y in [0, 1]
        coord_maps_.assign(3 * pixels(), 0.0);
        const double hx = shape_.width > 1 ? 1.0 / static_cast<double>(shape_.width - 1) : 0.0;
        const double hy = shape_.height > 1 ? 1.0 / static_cast<double>(shape_.height - 1) : 0.0;
        for (std::size_t i = 0; i < shape_.height; ++i)
            for (std::size_t j = 0; j < shape_.width; ++j) {
                coord_maps_[pixels() + i * shape_.width + j] = static_cast<double>(j) * hx;
                coord_maps_[2 * pixels() + i * shape_.width + j] = static_cast<double>(i) * hy;
            }
    }

    void build_params() {
        const std::size_t C = cfg_.channels, Wd = cfg_.width;
        params_.emplace_back("lift.w", ad::Shape{Wd, C + 3});
        params_.emplace_back("lift.b", ad::Shape{Wd});
        for (std::size_t l = 0; l < cfg_.depth; ++l) {
            const std::string tag = "block" + std::to_string(l);
            params_.emplace_back(tag + ".spec_re", ad::Shape{Wd, Wd, k1_, k2_});
            params_.emplace_back(tag + ".spec_im", ad::Shape{Wd, Wd, k1_, k2_});
            params_.emplace_back(tag + ".skip_w", ad::Shape{Wd, Wd});
            params_.emplace_back(tag + ".skip_b", ad::Shape{Wd});
        }
        params_.emplace_back("proj1.w", ad::Shape{Wd, Wd});
        params_.emplace_back("proj1.b", ad::Shape{Wd});
        params_.emplace_back("proj2.w", ad::Shape{cfg_.channels, Wd});
        params_.emplace_back("proj2.b", ad::Shape{cfg_.channels});
    }

    void init_params(std::uint64_t seed) {
        RngStream rng(splitmix64(seed ^ 0x5e77e4a11ULL));
        const double spec_scale =
            1.0 / (static_cast<double>(cfg_.width) * static_cast<double>(std::max<std::size_t>(
                                                         cfg_.n_modes, 1)));
        for (auto& p : params_) {
            if (p.name.find("spec") != std::string::npos) {
                for (auto& v : p.value) v = spec_scale * rng.normal();
            } else if (p.name.ends_with(".b")) {
                std::fill(p.value.begin(), p.value.end(), 0.0);
            } else {
                const double fan_in = static_cast<double>(p.shape.back());
                const double bound = 1.0 / std::sqrt(fan_in);
                for (auto& v : p.value) v = rng.uniform(-bound, bound);
            }
        }
    }

    NetworkConfig cfg_;
    FieldShape shape_;
    std::size_t k1_ = 0, k2_ = 0;
    std::vector<double> coord_maps_;  // [3 * H * W]: time slot, x map, y map
    std::vector<ad::Param> params_;
};

}  // namespace sbdot

#endif
