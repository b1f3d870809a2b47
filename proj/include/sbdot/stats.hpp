#ifndef SBDOT_STATS_HPP
#define SBDOT_STATS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sbdot/core.hpp"
#include "sbdot/ensemble.hpp"

namespace sbdot {

/// Pixelwise mean, population standard deviation and (with truth) bias fields.
struct EnsembleStats {
    Field mean;
    Field std;                  // population convention (divide by N)
    std::optional<Field> bias;  // mean - truth
};

inline EnsembleStats ensemble_stats(const SampleEnsemble& ens, const Field* truth = nullptr) {
    ens.check_nonempty();
    const FieldShape s = ens.samples.front().shape;
    if (truth != nullptr && !(truth->shape == s))
        throw DimensionError("ensemble_stats: truth shape does not match samples");
    const double N = static_cast<double>(ens.samples.size());
    EnsembleStats st;
    st.mean = Field(s);
    st.std = Field(s);
    for (const auto& f : ens.samples)
        for (std::size_t i = 0; i < f.size(); ++i) st.mean.v[i] += f.v[i];
    for (auto& v : st.mean.v) v /= N;
    for (const auto& f : ens.samples)
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double d = f.v[i] - st.mean.v[i];
            st.std.v[i] += d * d;
        }
    for (auto& v : st.std.v) v = std::sqrt(v / N);
    if (truth != nullptr) {
        st.bias = Field(s);
        for (std::size_t i = 0; i < s.size(); ++i)
            st.bias->v[i] = st.mean.v[i] - truth->v[i];
    }
    return st;
}

/// Map a rescaled [0,1] field back to physical perturbations:
/// channel 0 -> delta mua = 0.02 x - 0.01 (mm^-1), channel 1 -> 2 x - 1.
inline Field to_physical_units(const Field& x) {
    if (x.shape.channels != 2)
        throw DimensionError("to_physical_units: expects a 2-channel field");
    Field out = x;
    const std::size_t per = x.shape.height * x.shape.width;
    for (std::size_t i = 0; i < per; ++i) out.v[i] = 0.02 * x.v[i] - 0.01;
    for (std::size_t i = per; i < 2 * per; ++i) out.v[i] = 2.0 * x.v[i] - 1.0;
    return out;
}

/// 16-bit binary portable graymap of one channel. Values are affinely mapped
/// from [lo, hi] to [0, 65535]; the mapping is recorded in a header comment so
/// the image is self-describing. The CSV export is the raw-value contract.
inline void write_pgm16(const std::string& path, const Field& f, std::size_t channel, double lo,
                        double hi) {
    if (channel >= f.shape.channels) throw ParameterError("write_pgm16: channel out of range");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "P5\n# range " << lo << " " << hi << "\n"
       << f.shape.width << " " << f.shape.height << "\n65535\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < f.shape.height; ++i)
        for (std::size_t j = 0; j < f.shape.width; ++j) {
            double t = (f.at(channel, i, j) - lo) / span;
            t = std::clamp(t, 0.0, 1.0);
            const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
            // big-endian sample order per the PGM specification
            const unsigned char bytes[2] = {static_cast<unsigned char>(q >> 8),
                                            static_cast<unsigned char>(q & 0xff)};
            os.write(reinterpret_cast<const char*>(bytes), 2);
        }
    if (!os) throw IoError("write failed: " + path);
}

inline void write_pgm16_auto(const std::string& path, const Field& f, std::size_t channel) {
    double lo = f.v.empty() ? 0.0 : f.v[0], hi = lo;
    const std::size_t per = f.shape.height * f.shape.width;
    for (std::size_t i = 0; i < per; ++i) {
        const double v = f.v[channel * per + i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    write_pgm16(path, f, channel, lo, hi);
}

/// Raw values, one row per image row, full double precision.
inline void write_field_csv(const std::string& path, const Field& f) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.precision(17);
    for (std::size_t c = 0; c < f.shape.channels; ++c)
        for (std::size_t i = 0; i < f.shape.height; ++i) {
            for (std::size_t j = 0; j < f.shape.width; ++j) {
                if (j) os << ',';
                os << f.at(c, i, j);
            }
            os << '\n';
        }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace sbdot

#endif
