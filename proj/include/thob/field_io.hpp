#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "thob/grid.hpp"

namespace thob {

// Binary field file format "THOB", version 1:
//   magic "THOB" | u32 version | u32 dim | u32 nodes_per_axis[dim]
//   | f64 spacing[dim] | f64 origin[dim]
//   | f64 node values, row-major, last axis fastest
// All integers little-endian unsigned, all reals IEEE-754 binary64 LE.
inline constexpr std::uint32_t kFieldFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("field file: truncated header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("field file: truncated payload");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void write_field(const std::filesystem::path& path, const ScalarField& field) {
    const Grid& g = *field.grid;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write("THOB", 4);
    detail::put_u32(os, kFieldFormatVersion);
    detail::put_u32(os, std::uint32_t(g.dim));
    for (int d = 0; d < g.dim; ++d) detail::put_u32(os, std::uint32_t(g.npts[d]));
    for (int d = 0; d < g.dim; ++d) detail::put_f64(os, g.spacing[d]);
    for (int d = 0; d < g.dim; ++d) detail::put_f64(os, g.lo[d]);
    for (double v : field.values) detail::put_f64(os, v);
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline ScalarField read_field(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "THOB", 4) != 0)
        throw std::runtime_error("field file: bad magic in " + path.string());
    const std::uint32_t version = detail::get_u32(is);
    if (version != kFieldFormatVersion)
        throw std::runtime_error("field file: unsupported version " + std::to_string(version));
    const int dim = int(detail::get_u32(is));
    if (dim != 2 && dim != 3) throw std::runtime_error("field file: bad dimension");
    std::array<int, 3> npts{1, 1, 1};
    for (int d = 0; d < dim; ++d) npts[d] = int(detail::get_u32(is));
    std::array<double, 3> spacing{0, 0, 0}, origin{0, 0, 0};
    for (int d = 0; d < dim; ++d) spacing[d] = detail::get_f64(is);
    for (int d = 0; d < dim; ++d) origin[d] = detail::get_f64(is);

    const bool half = origin[dim - 1] == 0.0;
    GridPtr grid = half ? build_half_grid(dim, npts) : build_full_grid(dim, npts);
    for (int d = 0; d < dim; ++d) {
        if (std::abs(grid->spacing[d] - spacing[d]) > 1e-12 ||
            std::abs(grid->lo[d] - origin[d]) > 1e-12)
            throw std::runtime_error("field file: unsupported grid geometry");
    }
    ScalarField field(grid);
    for (double& v : field.values) v = detail::get_f64(is);
    return field;
}

}  // namespace thob
