#ifndef SBDOT_MATRIX_IO_HPP
#define SBDOT_MATRIX_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sbdot/linear_operator.hpp"

namespace sbdot {

static_assert(std::endian::native == std::endian::little,
              "binary file formats are little-endian; big-endian hosts are not supported");

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw IoError("unexpected end of file");
}

inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    read_bytes(is, &v, 8);
    return v;
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    read_bytes(is, &v, 4);
    return v;
}
inline double read_f64(std::istream& is) {
    double v;
    read_bytes(is, &v, 8);
    return v;
}

}  // namespace detail

// Matrix file: magic "SPMAT1\0", u64 m, u64 n, then m*n f64 row-major,
// all little-endian.
inline constexpr char kMatrixMagic[7] = {'S', 'P', 'M', 'A', 'T', '1', '\0'};

inline void write_matrix_file(const std::string& path, std::size_t m, std::size_t n,
                              const std::vector<double>& row_major) {
    if (row_major.size() != m * n) throw DimensionError("write_matrix_file: entry count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::write_bytes(os, kMatrixMagic, sizeof(kMatrixMagic));
    detail::write_u64(os, m);
    detail::write_u64(os, n);
    detail::write_bytes(os, row_major.data(), row_major.size() * sizeof(double));
}

struct MatrixFile {
    std::size_t m = 0, n = 0;
    std::vector<double> row_major;
};

inline MatrixFile read_matrix_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[7];
    detail::read_bytes(is, magic, sizeof(magic));
    if (std::memcmp(magic, kMatrixMagic, sizeof(magic)) != 0)
        throw IoError(path + ": not a SPMAT1 matrix file");
    MatrixFile f;
    f.m = detail::read_u64(is);
    f.n = detail::read_u64(is);
    f.row_major.resize(f.m * f.n);
    detail::read_bytes(is, f.row_major.data(), f.row_major.size() * sizeof(double));
    return f;
}

inline void write_operator(const std::string& path, const DenseMatrixOperator& op) {
    write_matrix_file(path, op.codomain_dim(), op.domain_shape().size(), op.entries());
}

inline DenseMatrixOperator read_operator(const std::string& path, FieldShape domain) {
    auto f = read_matrix_file(path);
    if (f.n != domain.size())
        throw DimensionError("read_operator: file has " + std::to_string(f.n) +
                             " columns, domain needs " + std::to_string(domain.size()));
    return DenseMatrixOperator(domain, f.m, std::move(f.row_major));
}

/// Plain data-vector file: raw little-endian f64, used to ingest externally
/// measured data in the [log-amplitude block; phase block] ordering.
inline void write_data_vector(const std::string& path, const std::vector<double>& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::write_bytes(os, v.data(), v.size() * sizeof(double));
}

inline std::vector<double> read_data_vector(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw IoError("cannot open " + path);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    if (bytes % sizeof(double) != 0) throw IoError(path + ": size is not a multiple of 8");
    is.seekg(0);
    std::vector<double> v(bytes / sizeof(double));
    detail::read_bytes(is, v.data(), bytes);
    return v;
}

}  // namespace sbdot

#endif
