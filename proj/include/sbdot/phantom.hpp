#ifndef SBDOT_PHANTOM_HPP
#define SBDOT_PHANTOM_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sbdot/core.hpp"
#include "sbdot/matrix_io.hpp"
#include "sbdot/rng.hpp"

namespace sbdot {

/// Law of the training phantoms: per channel, one to three circular
/// inclusions with uniform radius, position and contrast over a square grid.
struct PhantomSpec {
    Grid grid{32, 50.0};
    std::size_t channels = 2;
    std::size_t min_inclusions = 1;
    std::size_t max_inclusions = 3;
    double radius_min_mm = 0.0;
    double radius_max_mm = 10.0;
    double contrast_min = 0.0;
    double contrast_max = 1.0;

    void validate() const {
        if (grid.n == 0 || !(grid.extent_mm > 0.0))
            throw ParameterError("PhantomSpec: grid must be non-empty with positive extent");
        if (min_inclusions < 1 || max_inclusions < min_inclusions)
            throw ParameterError("PhantomSpec: inclusion count range invalid");
        if (!(radius_max_mm > radius_min_mm) || radius_min_mm < 0.0)
            throw ParameterError("PhantomSpec: radius range invalid");
        if (!(contrast_max >= contrast_min) || contrast_min < 0.0 || contrast_max > 1.0)
            throw ParameterError("PhantomSpec: contrast range must lie in [0, 1]");
    }
};

namespace detail_phantom {

struct Disk {
    double cx, cy, r, value;
};

/// Later inclusions overwrite earlier ones where they overlap.
inline void rasterize_disk(Field& f, std::size_t channel, const Grid& g, const Disk& d) {
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            const double dx = g.center_x(j) - d.cx;
            const double dy = g.center_y(i) - d.cy;
            if (dx * dx + dy * dy <= d.r * d.r) f.at(channel, i, j) = d.value;
        }
}

}  // namespace detail_phantom

/// Draw one phantom: channels are independent; per channel the inclusion
/// count is uniform on {min..max}, centres uniform over the square (clipping
/// at the boundary allowed), radii and contrasts uniform in their ranges.
/// Overlapping disks overwrite in draw order. `counts_out`, when given,
/// receives the per-channel inclusion counts.
inline Field generate_phantom(const PhantomSpec& spec, RngStream& rng,
                              std::vector<std::size_t>* counts_out = nullptr) {
    spec.validate();
    Field f(FieldShape{spec.channels, spec.grid.n, spec.grid.n});
    if (counts_out != nullptr) counts_out->clear();
    for (std::size_t c = 0; c < spec.channels; ++c) {
        const std::size_t count =
            spec.min_inclusions + rng.index(spec.max_inclusions - spec.min_inclusions + 1);
        if (counts_out != nullptr) counts_out->push_back(count);
        for (std::size_t k = 0; k < count; ++k) {
            detail_phantom::Disk d;
            d.cx = rng.uniform(0.0, spec.grid.extent_mm);
            d.cy = rng.uniform(0.0, spec.grid.extent_mm);
            d.r = rng.uniform(spec.radius_min_mm, spec.radius_max_mm);
            d.value = rng.uniform(spec.contrast_min, spec.contrast_max);
            detail_phantom::rasterize_disk(f, c, spec.grid, d);
        }
    }
    return f;
}

// Dataset file: magic "DOTDAT1", version byte, header (N, channels, H, W as
// u32 LE), then N * channels * H * W f64 LE.
inline constexpr char kDatasetMagic[7] = {'D', 'O', 'T', 'D', 'A', 'T', '1'};

inline void write_dataset(const std::string& path, const std::vector<Field>& fields) {
    if (fields.empty()) throw ParameterError("write_dataset: no fields");
    const FieldShape s = fields.front().shape;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::write_bytes(os, kDatasetMagic, sizeof(kDatasetMagic));
    const char version = 1;
    detail::write_bytes(os, &version, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(fields.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(s.channels));
    detail::write_u32(os, static_cast<std::uint32_t>(s.height));
    detail::write_u32(os, static_cast<std::uint32_t>(s.width));
    for (const auto& f : fields) {
        if (!(f.shape == s)) throw DimensionError("write_dataset: inhomogeneous shapes");
        detail::write_bytes(os, f.v.data(), f.v.size() * sizeof(double));
    }
}

inline std::vector<Field> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[7];
    detail::read_bytes(is, magic, sizeof(magic));
    if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
        throw IoError(path + ": not a DOTDAT1 dataset file");
    char version;
    detail::read_bytes(is, &version, 1);
    if (version != 1) throw IoError(path + ": unsupported dataset version");
    const std::uint32_t N = detail::read_u32(is);
    const std::uint32_t C = detail::read_u32(is);
    const std::uint32_t H = detail::read_u32(is);
    const std::uint32_t W = detail::read_u32(is);
    std::vector<Field> fields;
    fields.reserve(N);
    const FieldShape s{C, H, W};
    for (std::uint32_t k = 0; k < N; ++k) {
        Field f(s);
        detail::read_bytes(is, f.v.data(), f.v.size() * sizeof(double));
        fields.push_back(std::move(f));
    }
    return fields;
}

/// Generate N phantoms with per-index derived streams (reproducible and
/// order-independent) and write them as one dataset file.
inline std::vector<Field> generate_dataset(const PhantomSpec& spec, std::size_t N,
                                           std::uint64_t seed) {
    if (N < 1) throw ParameterError("generate_dataset: N >= 1 required");
    std::vector<Field> fields;
    fields.reserve(N);
    for (std::size_t k = 0; k < N; ++k) {
        RngStream rng = derive_stream(seed, k);
        fields.push_back(generate_phantom(spec, rng));
    }
    return fields;
}

inline void generate_dataset_file(const PhantomSpec& spec, std::size_t N, std::uint64_t seed,
                                  const std::string& path) {
    write_dataset(path, generate_dataset(spec, N, seed));
}

namespace detail_phantom {

inline void rasterize_ellipse(Field& f, std::size_t channel, const Grid& g, double cx, double cy,
                              double a, double b, double value) {
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            const double dx = (g.center_x(j) - cx) / a;
            const double dy = (g.center_y(i) - cy) / b;
            if (dx * dx + dy * dy <= 1.0) f.at(channel, i, j) = value;
        }
}

/// Point-in-triangle via signed areas; the predicate is symmetric in the
/// vertex ordering (all signs equal, zeros allowed on edges).
inline bool inside_triangle(double px, double py, const double vx[3], const double vy[3]) {
    double s[3];
    for (int k = 0; k < 3; ++k) {
        const int k2 = (k + 1) % 3;
        s[k] = (vx[k2] - vx[k]) * (py - vy[k]) - (vy[k2] - vy[k]) * (px - vx[k]);
    }
    const bool has_pos = s[0] > 0 || s[1] > 0 || s[2] > 0;
    const bool has_neg = s[0] < 0 || s[1] < 0 || s[2] < 0;
    return !(has_pos && has_neg);
}

inline void rasterize_triangle(Field& f, std::size_t channel, const Grid& g, const double vx[3],
                               const double vy[3], double value) {
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
            if (inside_triangle(g.center_x(j), g.center_y(i), vx, vy))
                f.at(channel, i, j) = value;
}

}  // namespace detail_phantom

/// Fixed out-of-distribution targets: per channel one ellipse (semi-axes
/// 12 x 6 mm) and one triangle (18 mm sides), contrast 0.5, at documented
/// positions on the default 50 mm domain (scaled with the grid extent).
inline std::map<std::string, Field> ood_phantoms(Grid grid = {32, 50.0},
                                                 std::size_t channels = 2) {
    const double s = grid.extent_mm / 50.0;  // documented coordinates are for 50 mm
    std::map<std::string, Field> out;

    Field ellipse(FieldShape{channels, grid.n, grid.n});
    for (std::size_t c = 0; c < channels; ++c)
        detail_phantom::rasterize_ellipse(ellipse, c, grid, 25.0 * s, 32.0 * s, 12.0 * s, 6.0 * s,
                                          0.5);
    out.emplace("ellipse", ellipse);

    Field triangle(FieldShape{channels, grid.n, grid.n});
    const double vx[3] = {25.0 * s, 34.0 * s, 16.0 * s};
    const double vy[3] = {10.0 * s, 22.0 * s, 22.0 * s};
    for (std::size_t c = 0; c < channels; ++c)
        detail_phantom::rasterize_triangle(triangle, c, grid, vx, vy, 0.5);
    out.emplace("triangle", triangle);

    Field both(FieldShape{channels, grid.n, grid.n});
    for (std::size_t i = 0; i < both.size(); ++i)
        both.v[i] = std::max(ellipse.v[i], triangle.v[i]);
    out.emplace("ellipse-triangle", both);
    return out;
}

}  // namespace sbdot

#endif
