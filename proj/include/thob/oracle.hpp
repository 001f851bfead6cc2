#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "thob/grid.hpp"
#include "thob/solver.hpp"

namespace thob {

// The classical homogeneous Signorini profile u = a r^{3/2} cos(3 theta / 2)
// in polar coordinates of the (x_1, x_n) plane, theta in [0, pi]; constant in
// the remaining tangential direction for dim 3. Harmonic on {x_n > 0} with
// contact on the ray theta = pi, where dn u = -(3/2) a r^{1/2} <= 0.
struct ExactSignoriniSolution {
    double amplitude = 1.0;
    int dim = 2;
    int extrusion_axis = 1;  // dim-3 tangential axis the profile is constant in

    ExactSignoriniSolution(double a, int d, int extrusion = 1)
        : amplitude(a), dim(d), extrusion_axis(extrusion) {
        if (a <= 0.0) throw std::invalid_argument("exact solution: amplitude must be positive");
        if (d != 2 && d != 3) throw std::invalid_argument("exact solution: dim must be 2 or 3");
        if (d == 3 && extrusion != 0 && extrusion != 1)
            throw std::invalid_argument("exact solution: extrusion axis must be tangential");
        verify_at_construction();
    }

    double value(const Vec3& x) const {
        const auto [r, theta] = plane_polar(x);
        // On the thin face the profile is exactly max(s, 0)^{3/2}; evaluating
        // cos(3 pi / 2) would leave a spurious -1e-16 on the contact ray.
        if (x[dim - 1] <= 0.0) {
            const double s = x[plane_axis()];
            return s > 0.0 ? amplitude * std::pow(s, 1.5) : 0.0;
        }
        return amplitude * std::pow(r, 1.5) * std::cos(1.5 * theta);
    }

    Vec3 gradient(const Vec3& x) const {
        const auto [r, theta] = plane_polar(x);
        Vec3 g{0, 0, 0};
        if (r == 0.0) return g;
        const double scale = 1.5 * amplitude * std::sqrt(r);
        const double g_plane = scale * std::cos(0.5 * theta);   // along the in-plane tangential axis
        const double g_normal = -scale * std::sin(0.5 * theta); // along x_n
        g[plane_axis()] = g_plane;
        g[dim - 1] = g_normal;
        return g;
    }

private:
    int plane_axis() const { return dim == 3 ? 1 - extrusion_axis : 0; }

    std::pair<double, double> plane_polar(const Vec3& x) const {
        const double s = x[plane_axis()];
        const double xn = x[dim - 1];
        if (xn < -1e-12) throw std::domain_error("exact solution: requires x_n >= 0");
        const double r = std::hypot(s, xn);
        const double theta = r == 0.0 ? 0.0 : std::atan2(std::max(0.0, xn), s);
        return {r, theta};
    }

    void verify_at_construction() const {
        // Harmonicity on a probe set via 5-point differences, and the
        // Signorini conditions on the thin ray.
        const double fd = 1e-4;
        for (int i = 0; i < 24; ++i) {
            const double ang = std::numbers::pi * (double(i) + 0.5) / 24.0;
            const double r = 0.2 + 0.6 * double(i % 5) / 5.0;
            Vec3 x{0, 0, 0};
            x[plane_axis()] = r * std::cos(ang);
            x[dim - 1] = r * std::sin(ang);
            double lap = 0.0;
            for (int d = 0; d < dim; ++d) {
                Vec3 xp = x, xm = x;
                xp[d] += fd;
                xm[d] -= fd;
                if (xm[dim - 1] < 0.0) continue;  // stay in the half space
                lap += (value(xp) - 2.0 * value(x) + value(xm)) / (fd * fd);
            }
            if (std::abs(lap) > 1e-4 * amplitude)
                throw std::logic_error("exact solution: harmonicity probe failed");
        }
        for (int i = 1; i <= 8; ++i) {
            const double r = double(i) / 8.0;
            Vec3 plus{0, 0, 0}, minus{0, 0, 0};
            plus[plane_axis()] = r;
            minus[plane_axis()] = -r;
            const double u_plus = value(plus), u_minus = value(minus);
            if (u_plus < 0.0 || std::abs(u_minus) > 1e-12 * amplitude)
                throw std::logic_error("exact solution: thin-trace sign probe failed");
            const double dn_minus = gradient(minus)[dim - 1];
            const double dn_plus = gradient(plus)[dim - 1];
            if (dn_minus > 1e-12 || std::abs(u_plus * dn_plus) > 1e-12 * amplitude)
                throw std::logic_error("exact solution: complementarity probe failed");
        }
    }
};

inline double eval_exact(const ExactSignoriniSolution& sol, const Vec3& x) { return sol.value(x); }
inline Vec3 eval_exact_gradient(const ExactSignoriniSolution& sol, const Vec3& x) {
    return sol.gradient(x);
}

inline BoundaryData oracle_trace_boundary(const ExactSignoriniSolution& sol) {
    return BoundaryData{[sol](Vec3 x) { return sol.value(x); }, true};
}

// ---------------------------------------------------------------------------
// Independent reference solver for tiny grids.

struct BruteForceResult {
    ScalarField solution;
    double energy = 0.0;
    std::uint32_t pattern = 0;       // winning contact pattern over THIN nodes
    double runner_up_gap = 0.0;      // energy gap to the second-best feasible pattern
    long feasible_patterns = 0;
};

// Quadratic model: exhaustive enumeration over all 2^#THIN contact patterns,
// each reduced to a dense linear solve; feasibility means u >= 0 off the
// pattern and sigma_n >= 0 on it. Other models: long-horizon projected
// gradient with a fixed small step as a slow reference.
inline BruteForceResult brute_force_solve(GridPtr grid, const NonlinearityModel& model,
                                          const BoundaryData& bdata) {
    const Grid& g = *grid;
    detail::validate_boundary(g, bdata);

    std::vector<std::size_t> thin;
    for (std::size_t i = 0; i < g.node_count(); ++i)
        if (g.node_class[i] == NodeClass::Thin) thin.push_back(i);
    if (thin.size() > 12)
        throw std::invalid_argument("brute_force_solve: more than 12 thin nodes");

    if (model.name != "quadratic") {
        // Slow reference: 1e6 fixed-step projected-gradient iterations.
        ScalarField u = detail::initial_iterate(grid, bdata);
        const double step = 1e-3;
        for (long it = 0; it < 1000000; ++it) {
            const auto r = discrete_residual(u, model);
            for (std::size_t i = 0; i < g.node_count(); ++i)
                if (g.node_class[i] != NodeClass::Dirichlet) u[i] -= step * r[i];
            detail::project_feasible(g, u.values);
        }
        BruteForceResult res{u, discrete_energy(u, model), 0, 0.0, 1};
        return res;
    }

    // Assemble the stiffness action column by column; the quadratic-model
    // residual is linear in the node values.
    const std::size_t n = g.node_count();
    std::vector<std::size_t> unknown;  // non-Dirichlet nodes
    std::vector<int> unknown_of(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.node_class[i] != NodeClass::Dirichlet) {
            unknown_of[i] = int(unknown.size());
            unknown.push_back(i);
        }
    }
    const std::size_t m = unknown.size();

    ScalarField gfield(grid);
    for (std::size_t i = 0; i < n; ++i)
        gfield[i] = g.node_class[i] == NodeClass::Dirichlet ? bdata.g(g.position(i)) : 0.0;
    const std::vector<double> rhs_fixed = discrete_residual(gfield, model);

    std::vector<double> K(m * m, 0.0);
    {
        ScalarField unit(grid);
        for (std::size_t j = 0; j < m; ++j) {
            std::fill(unit.values.begin(), unit.values.end(), 0.0);
            unit[unknown[j]] = 1.0;
            const auto col = discrete_residual(unit, model);
            for (std::size_t i = 0; i < m; ++i) K[i * m + j] = col[unknown[i]];
        }
    }

    const double thin_measure = g.thin_patch_measure();
    const double feas_tol = 1e-10;
    BruteForceResult best;
    best.solution = ScalarField(grid);
    double best_energy = std::numeric_limits<double>::infinity();
    double second_energy = std::numeric_limits<double>::infinity();
    bool found = false;
    std::uint32_t best_pattern = 0;

    const std::uint32_t npat = std::uint32_t(1) << thin.size();
    for (std::uint32_t pat = 0; pat < npat; ++pat) {
        // Unknowns of this pattern: all non-Dirichlet nodes except pinned thin nodes.
        std::vector<std::size_t> freev;
        std::vector<int> free_of(m, -1);
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t node = unknown[j];
            bool pinned = false;
            for (std::size_t t = 0; t < thin.size(); ++t)
                if (thin[t] == node && ((pat >> t) & 1)) pinned = true;
            if (!pinned) {
                free_of[j] = int(freev.size());
                freev.push_back(j);
            }
        }
        const std::size_t fm = freev.size();
        std::vector<double> A(fm * fm), b(fm);
        for (std::size_t i = 0; i < fm; ++i) {
            for (std::size_t j = 0; j < fm; ++j) A[i * fm + j] = K[freev[i] * m + freev[j]];
            b[i] = -rhs_fixed[unknown[freev[i]]];
        }
        std::vector<double> x;
        try {
            x = fm > 0 ? detail::lu_solve(std::move(A), std::move(b)) : std::vector<double>{};
        } catch (const std::runtime_error&) {
            continue;  // singular reduced system: not a valid pattern
        }

        ScalarField u = gfield;
        for (std::size_t i = 0; i < fm; ++i) u[unknown[freev[i]]] = x[i];
        // Pinned nodes already zero in gfield.

        bool feasible = true;
        const auto resid = discrete_residual(u, model);
        for (std::size_t t = 0; t < thin.size() && feasible; ++t) {
            const std::size_t node = thin[t];
            if ((pat >> t) & 1) {
                if (resid[node] / thin_measure < -feas_tol) feasible = false;
            } else {
                if (u[node] < -feas_tol) feasible = false;
            }
        }
        if (!feasible) continue;

        const double e = discrete_energy(u, model);
        // Ascending enumeration + strict improvement keeps the smallest
        // pattern among exact ties.
        if (!found || e < best_energy - 1e-14) {
            if (found) second_energy = std::min(second_energy, best_energy);
            best_energy = e;
            best.solution = u;
            best_pattern = pat;
            found = true;
        } else {
            second_energy = std::min(second_energy, e);
        }
        ++best.feasible_patterns;
    }

    if (!found) throw std::runtime_error("brute_force_solve: no feasible pattern (assembly bug?)");
    best.energy = best_energy;
    best.pattern = best_pattern;
    best.runner_up_gap =
        std::isfinite(second_energy) ? second_energy - best_energy : std::numeric_limits<double>::infinity();
    return best;
}

}  // namespace thob
