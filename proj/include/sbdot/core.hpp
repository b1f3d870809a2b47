#ifndef SBDOT_CORE_HPP
#define SBDOT_CORE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbdot {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or size of an argument does not match the operator/field it is used with.
struct DimensionError : Error {
    using Error::Error;
};

/// A scalar argument is outside its admissible range.
struct ParameterError : Error {
    using Error::Error;
};

/// A linear-algebra routine failed (singular system, indefinite matrix, ...).
struct NumericalError : Error {
    using Error::Error;
};

/// A sampler chain produced a non-finite state.
struct DivergenceError : NumericalError {
    DivergenceError(const std::string& what, std::size_t step)
        : NumericalError(what + " (step " + std::to_string(step) + ")"), step_index(step) {}
    std::size_t step_index;
};

struct TrainingError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

/// Shape of a field: channels x height x width, stored channel-major.
struct FieldShape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return channels * height * width; }
    bool operator==(const FieldShape&) const = default;

    std::string str() const {
        return "(" + std::to_string(channels) + ", " + std::to_string(height) + ", " +
               std::to_string(width) + ")";
    }
};

/// A real-valued multi-channel image. Values are contiguous, channel-major:
/// v[c*H*W + i*W + j] is channel c, row i, column j.
struct Field {
    FieldShape shape;
    std::vector<double> v;

    Field() = default;
    explicit Field(FieldShape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}
    Field(FieldShape s, std::vector<double> values) : shape(s), v(std::move(values)) {
        if (v.size() != shape.size())
            throw DimensionError("field values length " + std::to_string(v.size()) +
                                 " does not match shape " + shape.str());
    }

    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return v[(c * shape.height + i) * shape.width + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return v[(c * shape.height + i) * shape.width + j];
    }
    std::size_t size() const { return v.size(); }
};

/// Square pixel grid with physical extent in millimetres. Pixel (i, j) is the
/// cell [j*dx, (j+1)*dx] x [i*dx, (i+1)*dx] with centre at ((j+.5)dx, (i+.5)dx).
struct Grid {
    std::size_t n = 0;       // pixels per side
    double extent_mm = 0.0;  // physical side length

    double spacing() const { return extent_mm / static_cast<double>(n); }
    std::size_t cells() const { return n * n; }
    double center_x(std::size_t j) const { return (static_cast<double>(j) + 0.5) * spacing(); }
    double center_y(std::size_t i) const { return (static_cast<double>(i) + 0.5) * spacing(); }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const std::vector<double>& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void check_same_shape(const Field& a, const Field& b, const char* where) {
    if (!(a.shape == b.shape))
        throw DimensionError(std::string(where) + ": field shapes differ, " + a.shape.str() +
                             " vs " + b.shape.str());
}

}  // namespace sbdot

#endif
