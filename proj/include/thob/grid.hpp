#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "thob/detail/linalg.hpp"

namespace thob {

enum class NodeClass : std::uint8_t { Interior, Thin, Dirichlet };

// Uniform node lattice on a box. The half-domain variant lives on
// [-1,1]^{n-1} x [0,1] with the thin face at x_n = 0; the full variant
// ([-1,1]^n) backs the symmetrization checks. Node indexing is row-major
// with the last axis fastest, matching the on-disk field format.
struct Grid {
    int dim = 2;
    std::array<int, 3> npts{1, 1, 1};
    std::array<double, 3> lo{0, 0, 0};
    std::array<double, 3> hi{0, 0, 0};
    std::array<double, 3> spacing{0, 0, 0};
    bool has_thin_face = false;
    std::vector<NodeClass> node_class;

    std::size_t node_count() const {
        std::size_t n = 1;
        for (int d = 0; d < dim; ++d) n *= std::size_t(npts[d]);
        return n;
    }

    std::size_t index(const std::array<int, 3>& c) const {
        std::size_t idx = std::size_t(c[0]);
        for (int d = 1; d < dim; ++d) idx = idx * std::size_t(npts[d]) + std::size_t(c[d]);
        return idx;
    }

    std::array<int, 3> coords(std::size_t idx) const {
        std::array<int, 3> c{0, 0, 0};
        for (int d = dim - 1; d >= 1; --d) {
            c[d] = int(idx % std::size_t(npts[d]));
            idx /= std::size_t(npts[d]);
        }
        c[0] = int(idx);
        return c;
    }

    Vec3 position(const std::array<int, 3>& c) const {
        Vec3 x{0, 0, 0};
        for (int d = 0; d < dim; ++d) x[d] = lo[d] + spacing[d] * double(c[d]);
        return x;
    }

    Vec3 position(std::size_t idx) const { return position(coords(idx)); }

    bool contains(const Vec3& x, double tol = 1e-12) const {
        for (int d = 0; d < dim; ++d)
            if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
        return true;
    }

    double min_spacing() const {
        double s = spacing[0];
        for (int d = 1; d < dim; ++d) s = std::min(s, spacing[d]);
        return s;
    }

    // Measure of one node's tangential patch on the thin face.
    double thin_patch_measure() const {
        double m = 1.0;
        for (int d = 0; d + 1 < dim; ++d) m *= spacing[d];
        return m;
    }

    double cell_volume() const {
        double v = 1.0;
        for (int d = 0; d < dim; ++d) v *= spacing[d];
        return v;
    }
};

using GridPtr = std::shared_ptr<const Grid>;

namespace detail {

inline void check_axis_counts(int dim, const std::array<int, 3>& npts) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("grid: dim must be 2 or 3");
    for (int d = 0; d < dim; ++d) {
        if (npts[d] < 3) throw std::invalid_argument("grid: need at least 3 nodes per axis");
        if (npts[d] % 2 == 0)
            throw std::invalid_argument("grid: node counts must be odd so the origin is a node");
    }
}

inline void classify(Grid& g) {
    g.node_class.assign(g.node_count(), NodeClass::Interior);
    const int n = g.dim;
    for (std::size_t idx = 0; idx < g.node_count(); ++idx) {
        const auto c = g.coords(idx);
        const bool on_thin_face = g.has_thin_face && c[n - 1] == 0;
        bool on_outer = false;  // box boundary minus the open thin face
        for (int d = 0; d < n; ++d) {
            const bool at_lo = c[d] == 0;
            const bool at_hi = c[d] == g.npts[d] - 1;
            if (d == n - 1 && g.has_thin_face) {
                if (at_hi) on_outer = true;  // top face; the bottom face is thin
            } else if (at_lo || at_hi) {
                on_outer = true;
            }
        }
        if (on_outer)
            g.node_class[idx] = NodeClass::Dirichlet;
        else if (on_thin_face)
            g.node_class[idx] = NodeClass::Thin;
        else
            g.node_class[idx] = NodeClass::Interior;
    }
}

}  // namespace detail

inline GridPtr build_half_grid(int dim, const std::array<int, 3>& npts) {
    detail::check_axis_counts(dim, npts);
    auto g = std::make_shared<Grid>();
    g->dim = dim;
    g->npts = npts;
    g->has_thin_face = true;
    for (int d = 0; d < dim; ++d) {
        g->lo[d] = d == dim - 1 ? 0.0 : -1.0;
        g->hi[d] = 1.0;
        g->spacing[d] = (g->hi[d] - g->lo[d]) / double(npts[d] - 1);
    }
    detail::classify(*g);
    return g;
}

inline GridPtr build_full_grid(int dim, const std::array<int, 3>& npts) {
    detail::check_axis_counts(dim, npts);
    auto g = std::make_shared<Grid>();
    g->dim = dim;
    g->npts = npts;
    g->has_thin_face = false;
    for (int d = 0; d < dim; ++d) {
        g->lo[d] = -1.0;
        g->hi[d] = 1.0;
        g->spacing[d] = 2.0 / double(npts[d] - 1);
    }
    detail::classify(*g);
    return g;
}

// Node-valued scalar field.
struct ScalarField {
    GridPtr grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(GridPtr g, double fill = 0.0)
        : grid(std::move(g)), values(grid->node_count(), fill) {}

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

// Node-valued vector field, components stored consecutively per node.
struct VectorField {
    GridPtr grid;
    std::vector<double> values;

    VectorField() = default;
    explicit VectorField(GridPtr g)
        : grid(std::move(g)), values(grid->node_count() * std::size_t(grid->dim), 0.0) {}

    Vec3 at(std::size_t node) const {
        Vec3 v{0, 0, 0};
        for (int d = 0; d < grid->dim; ++d) v[d] = values[node * std::size_t(grid->dim) + d];
        return v;
    }

    void set(std::size_t node, const Vec3& v) {
        for (int d = 0; d < grid->dim; ++d) values[node * std::size_t(grid->dim) + d] = v[d];
    }
};

template <class F>
ScalarField sample_field(GridPtr grid, F&& f) {
    ScalarField u(grid);
    for (std::size_t i = 0; i < grid->node_count(); ++i) u[i] = f(grid->position(i));
    return u;
}

// Node gradients by central differences, second-order one-sided at faces.
inline VectorField node_gradient_field(const ScalarField& u) {
    const Grid& g = *u.grid;
    VectorField grad(u.grid);
    for (std::size_t idx = 0; idx < g.node_count(); ++idx) {
        const auto c = g.coords(idx);
        Vec3 gv{0, 0, 0};
        for (int d = 0; d < g.dim; ++d) {
            const double h = g.spacing[d];
            auto shifted = [&](int off) {
                auto cc = c;
                cc[d] += off;
                return u.values[g.index(cc)];
            };
            if (c[d] == 0)
                gv[d] = (-3.0 * shifted(0) + 4.0 * shifted(1) - shifted(2)) / (2.0 * h);
            else if (c[d] == g.npts[d] - 1)
                gv[d] = (3.0 * shifted(0) - 4.0 * shifted(-1) + shifted(-2)) / (2.0 * h);
            else
                gv[d] = (shifted(1) - shifted(-1)) / (2.0 * h);
        }
        grad.set(idx, gv);
    }
    return grad;
}

namespace detail {

struct CellLocator {
    std::array<int, 3> cell{0, 0, 0};
    std::array<double, 3> t{0, 0, 0};  // local coordinates in [0,1]
};

inline CellLocator locate(const Grid& g, const Vec3& x) {
    if (!g.contains(x)) throw std::domain_error("interpolate: point outside grid extent");
    CellLocator loc;
    for (int d = 0; d < g.dim; ++d) {
        double s = (x[d] - g.lo[d]) / g.spacing[d];
        int i = int(std::floor(s));
        i = std::max(0, std::min(i, g.npts[d] - 2));
        loc.cell[d] = i;
        loc.t[d] = std::min(1.0, std::max(0.0, s - double(i)));
    }
    return loc;
}

}  // namespace detail

// Multilinear interpolation of node values.
inline double interpolate(const ScalarField& u, const Vec3& x) {
    const Grid& g = *u.grid;
    const auto loc = detail::locate(g, x);
    const int corners = 1 << g.dim;
    double acc = 0.0;
    for (int cbits = 0; cbits < corners; ++cbits) {
        double w = 1.0;
        auto cc = loc.cell;
        for (int d = 0; d < g.dim; ++d) {
            const bool hi = (cbits >> d) & 1;
            w *= hi ? loc.t[d] : (1.0 - loc.t[d]);
            cc[d] += hi ? 1 : 0;
        }
        acc += w * u.values[g.index(cc)];
    }
    return acc;
}

// Multilinear interpolation of a precomputed node-gradient field.
inline Vec3 interpolate_vector(const VectorField& v, const Vec3& x) {
    const Grid& g = *v.grid;
    const auto loc = detail::locate(g, x);
    const int corners = 1 << g.dim;
    Vec3 acc{0, 0, 0};
    for (int cbits = 0; cbits < corners; ++cbits) {
        double w = 1.0;
        auto cc = loc.cell;
        for (int d = 0; d < g.dim; ++d) {
            const bool hi = (cbits >> d) & 1;
            w *= hi ? loc.t[d] : (1.0 - loc.t[d]);
            cc[d] += hi ? 1 : 0;
        }
        const Vec3 nodal = v.at(g.index(cc));
        for (int d = 0; d < g.dim; ++d) acc[d] += w * nodal[d];
    }
    return acc;
}

}  // namespace thob
