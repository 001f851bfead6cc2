#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "thob/grid.hpp"
#include "thob/nonlinearity.hpp"

namespace thob {

// Dirichlet data on the outer boundary. `g` must be evaluable at every
// Dirichlet node; if thin_trace_nonneg is set, g >= 0 is enforced on the rim
// of the thin face (the trace constraint a feasible problem requires).
struct BoundaryData {
    std::function<double(Vec3)> g;
    bool thin_trace_nonneg = true;
};

inline BoundaryData constant_boundary(double value) {
    return BoundaryData{[value](Vec3) { return value; }, value >= 0.0};
}

struct SolveConfig {
    enum class Method { ProjectedGradient, ActiveSetNewton };
    Method method = Method::ActiveSetNewton;
    double tol_kkt = 1e-8;           // 1e-8 quadratic, 1e-6 nonlinear
    int max_iterations = 500;
    double linear_tol = 1e-12;       // relative CG tolerance
    int max_linear_iterations = 0;   // 0: scaled with problem size
    double armijo_c1 = 1e-4;
    double bb_step_min = 1e-12;
    double bb_step_max = 1e12;

    static SolveConfig for_model(const NonlinearityModel& m) {
        SolveConfig c;
        c.tol_kkt = (m.name == "quadratic") ? 1e-8 : 1e-6;
        return c;
    }
};

struct KktResiduals {
    double interior_residual_inf = 0.0;
    double thin_complementarity_inf = 0.0;
    double feasibility_inf = 0.0;

    bool within(double tol) const {
        return interior_residual_inf <= tol && thin_complementarity_inf <= tol &&
               feasibility_inf <= tol;
    }
};

enum class SolveStatus { Converged, NonConverged, IllPosed };

struct SolveReport {
    int iterations = 0;
    std::vector<double> energy_history;
    KktResiduals kkt;
    std::vector<std::size_t> thin_nodes;      // all THIN node ids, ascending
    std::vector<double> sigma_n;              // -flux.e_n trace per THIN node
    std::vector<std::size_t> active_set;      // THIN nodes with u = 0
    std::vector<std::size_t> degenerate_set;  // u = 0 and sigma_n = 0 transitions
    double max_gradient_norm = 0.0;
    bool exceeded_t_bar = false;
    double lambda_on_range = 0.0;  // ellipticity floor on the iterate's gradient range
    SolveStatus status = SolveStatus::NonConverged;
};

namespace detail {

// Cell-based assembly for the energy E(u) = sum_cells |cell| f(grad of the
// multilinear interpolant at the cell center). The per-cell gradient is
// g_d = sum_corners sign_d(corner) u_corner / (2^{n-1} h_d).
struct CellAssembly {
    const Grid* grid;
    int corners;
    std::vector<std::size_t> corner_offsets;     // node-index offset per corner
    std::vector<std::array<double, 3>> corner_b; // d(g_d)/d(u_corner)
    std::array<int, 3> cells{1, 1, 1};
    double volume;

    explicit CellAssembly(const Grid& g) : grid(&g) {
        const int n = g.dim;
        corners = 1 << n;
        std::array<std::size_t, 3> stride{1, 1, 1};
        for (int d = n - 2; d >= 0; --d) stride[d] = stride[d + 1] * std::size_t(g.npts[d + 1]);
        for (int c = 0; c < corners; ++c) {
            std::size_t off = 0;
            std::array<double, 3> b{0, 0, 0};
            for (int d = 0; d < n; ++d) {
                const bool hi = (c >> (n - 1 - d)) & 1;  // bit order matches axis order
                if (hi) off += stride[d];
                b[d] = (hi ? 1.0 : -1.0) / (double(1 << (n - 1)) * g.spacing[d]);
            }
            corner_offsets.push_back(off);
            corner_b.push_back(b);
        }
        volume = g.cell_volume();
        for (int d = 0; d < n; ++d) cells[d] = g.npts[d] - 1;
    }

    template <class PerCell>
    void for_each_cell(PerCell&& fn) const {
        const int n = grid->dim;
        std::array<int, 3> c{0, 0, 0};
        while (true) {
            fn(grid->index(c));
            int d = n - 1;
            while (d >= 0) {
                if (++c[d] < cells[d]) break;
                c[d] = 0;
                --d;
            }
            if (d < 0) break;
        }
    }

    Vec3 cell_gradient(const std::vector<double>& u, std::size_t base) const {
        Vec3 g{0, 0, 0};
        for (int c = 0; c < corners; ++c) {
            const double v = u[base + corner_offsets[std::size_t(c)]];
            for (int d = 0; d < grid->dim; ++d) g[d] += corner_b[std::size_t(c)][d] * v;
        }
        return g;
    }
};

}  // namespace detail

// Energy of the discrete minimization problem; convex in the node values.
inline double discrete_energy(const ScalarField& u, const NonlinearityModel& model) {
    const detail::CellAssembly asmb(*u.grid);
    std::vector<double> terms;
    terms.reserve(u.grid->node_count());
    asmb.for_each_cell([&](std::size_t base) {
        terms.push_back(asmb.volume * energy_density(model, asmb.cell_gradient(u.values, base)));
    });
    return pairwise_sum(terms);
}

// Exact gradient of discrete_energy with respect to node values. Entries at
// DIRICHLET nodes are masked to zero; THIN entries carry the natural
// boundary term, i.e. sigma_n scaled by the node's thin-face patch measure.
inline std::vector<double> discrete_residual(const ScalarField& u, const NonlinearityModel& model) {
    const Grid& g = *u.grid;
    const detail::CellAssembly asmb(g);
    std::vector<double> r(g.node_count(), 0.0);
    asmb.for_each_cell([&](std::size_t base) {
        const Vec3 grad = asmb.cell_gradient(u.values, base);
        const Vec3 fl = flux(model, grad);
        for (int c = 0; c < asmb.corners; ++c) {
            double acc = 0.0;
            for (int d = 0; d < g.dim; ++d) acc += fl[d] * asmb.corner_b[std::size_t(c)][d];
            r[base + asmb.corner_offsets[std::size_t(c)]] += asmb.volume * acc;
        }
    });
    for (std::size_t i = 0; i < g.node_count(); ++i)
        if (g.node_class[i] == NodeClass::Dirichlet) r[i] = 0.0;
    return r;
}

namespace detail {

// Action of the energy Hessian at the current iterate on a vector, masked to
// the rows/columns in `mask`.
inline void hessian_apply(const Grid& g, const CellAssembly& asmb, const NonlinearityModel& model,
                          const std::vector<double>& u, const std::vector<char>& mask,
                          const std::vector<double>& v, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    asmb.for_each_cell([&](std::size_t base) {
        const Vec3 grad = asmb.cell_gradient(u, base);
        const Mat3 he = hessian(model, grad, g.dim);
        Vec3 gv{0, 0, 0};
        for (int c = 0; c < asmb.corners; ++c) {
            const std::size_t idx = base + asmb.corner_offsets[std::size_t(c)];
            if (!mask[idx]) continue;
            for (int d = 0; d < g.dim; ++d) gv[d] += asmb.corner_b[std::size_t(c)][d] * v[idx];
        }
        Vec3 w{0, 0, 0};
        for (int i = 0; i < g.dim; ++i)
            for (int j = 0; j < g.dim; ++j) w[i] += he[i][j] * gv[j];
        for (int c = 0; c < asmb.corners; ++c) {
            const std::size_t idx = base + asmb.corner_offsets[std::size_t(c)];
            if (!mask[idx]) continue;
            double acc = 0.0;
            for (int d = 0; d < g.dim; ++d) acc += w[d] * asmb.corner_b[std::size_t(c)][d];
            out[idx] += asmb.volume * acc;
        }
    });
}

inline std::vector<double> hessian_diagonal(const Grid& g, const CellAssembly& asmb,
                                            const NonlinearityModel& model,
                                            const std::vector<double>& u) {
    std::vector<double> diag(g.node_count(), 0.0);
    asmb.for_each_cell([&](std::size_t base) {
        const Vec3 grad = asmb.cell_gradient(u, base);
        const Mat3 he = hessian(model, grad, g.dim);
        for (int c = 0; c < asmb.corners; ++c) {
            double acc = 0.0;
            for (int i = 0; i < g.dim; ++i)
                for (int j = 0; j < g.dim; ++j)
                    acc += asmb.corner_b[std::size_t(c)][i] * he[i][j] * asmb.corner_b[std::size_t(c)][j];
            diag[base + asmb.corner_offsets[std::size_t(c)]] += asmb.volume * acc;
        }
    });
    return diag;
}

}  // namespace detail

// KKT certificate: (interior stationarity, thin complementarity through the
// min-function reformulation min(u_i, sigma_n_i), Dirichlet/sign feasibility).
inline KktResiduals kkt_residuals(const ScalarField& u, const NonlinearityModel& model,
                                  const BoundaryData& bdata) {
    const Grid& g = *u.grid;
    const std::vector<double> r = discrete_residual(u, model);
    const double thin_measure = g.thin_patch_measure();
    KktResiduals k;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        switch (g.node_class[i]) {
            case NodeClass::Interior:
                k.interior_residual_inf = std::max(k.interior_residual_inf, std::abs(r[i]));
                break;
            case NodeClass::Thin: {
                const double sigma = r[i] / thin_measure;
                k.thin_complementarity_inf =
                    std::max(k.thin_complementarity_inf, std::abs(std::min(u[i], sigma)));
                k.feasibility_inf = std::max(k.feasibility_inf, std::max(0.0, -u[i]));
                break;
            }
            case NodeClass::Dirichlet:
                k.feasibility_inf =
                    std::max(k.feasibility_inf, std::abs(u[i] - bdata.g(g.position(i))));
                break;
        }
    }
    return k;
}

namespace detail {

inline void validate_boundary(const Grid& g, const BoundaryData& bdata) {
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (g.node_class[i] != NodeClass::Dirichlet) continue;
        const Vec3 x = g.position(i);
        const double v = bdata.g(x);
        if (!std::isfinite(v))
            throw std::invalid_argument("boundary data not finite at node " + std::to_string(i));
        if (bdata.thin_trace_nonneg && g.has_thin_face && x[g.dim - 1] == g.lo[g.dim - 1] &&
            v < 0.0)
            throw std::invalid_argument("boundary data negative on the thin-face rim at node " +
                                        std::to_string(i));
    }
}

// Feasible deterministic start: multilinear blend of the box-corner values
// of g, overridden by g on Dirichlet nodes, clipped to >= 0 on the thin face.
inline ScalarField initial_iterate(GridPtr grid, const BoundaryData& bdata) {
    const Grid& g = *grid;
    ScalarField u(grid);
    const int corners = 1 << g.dim;
    std::vector<double> corner_vals(static_cast<std::size_t>(corners), 0.0);
    for (int c = 0; c < corners; ++c) {
        Vec3 x{0, 0, 0};
        for (int d = 0; d < g.dim; ++d) x[d] = ((c >> d) & 1) ? g.hi[d] : g.lo[d];
        corner_vals[std::size_t(c)] = bdata.g(x);
    }
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const Vec3 x = g.position(i);
        double acc = 0.0;
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            for (int d = 0; d < g.dim; ++d) {
                const double t = (x[d] - g.lo[d]) / (g.hi[d] - g.lo[d]);
                w *= ((c >> d) & 1) ? t : (1.0 - t);
            }
            acc += w * corner_vals[std::size_t(c)];
        }
        u[i] = acc;
    }
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (g.node_class[i] == NodeClass::Dirichlet)
            u[i] = bdata.g(g.position(i));
        else if (g.node_class[i] == NodeClass::Thin)
            u[i] = std::max(0.0, u[i]);
    }
    return u;
}

inline void project_feasible(const Grid& g, std::vector<double>& u) {
    for (std::size_t i = 0; i < g.node_count(); ++i)
        if (g.node_class[i] == NodeClass::Thin) u[i] = std::max(0.0, u[i]);
}

}  // namespace detail

// Solve the discrete Signorini problem: minimize E over u = g on DIRICHLET,
// u >= 0 on THIN. Projected gradient with Barzilai-Borwein steps is the
// robust baseline; the active-set Newton method freezes the active set,
// solves the reduced Newton system with Jacobi-preconditioned CG, and
// re-projects. Both certify the KKT residuals of the returned iterate.
inline std::pair<ScalarField, SolveReport> solve_signorini(GridPtr grid,
                                                           const NonlinearityModel& model,
                                                           const BoundaryData& bdata,
                                                           const SolveConfig& cfg) {
    if (cfg.tol_kkt <= 0.0 || cfg.max_iterations < 1)
        throw std::invalid_argument("solve config: tolerances must be positive, iterations >= 1");
    const Grid& g = *grid;
    detail::validate_boundary(g, bdata);
    const detail::CellAssembly asmb(g);
    const double thin_measure = g.thin_patch_measure();

    ScalarField u = detail::initial_iterate(grid, bdata);
    SolveReport rep;

    const std::size_t n = g.node_count();
    std::vector<char> free_mask(n, 0);
    std::vector<double> r(n, 0.0), dir(n, 0.0), u_trial(n, 0.0), r_prev, u_prev;
    const int max_lin = cfg.max_linear_iterations > 0 ? cfg.max_linear_iterations
                                                      : int(10 * std::sqrt(double(n)) + 200);

    auto energy = [&](const std::vector<double>& vals) {
        std::vector<double> terms;
        terms.reserve(n);
        asmb.for_each_cell([&](std::size_t base) {
            terms.push_back(asmb.volume * energy_density(model, asmb.cell_gradient(vals, base)));
        });
        return pairwise_sum(terms);
    };

    auto compute_kkt = [&](const std::vector<double>& res) {
        KktResiduals k;
        for (std::size_t i = 0; i < n; ++i) {
            if (g.node_class[i] == NodeClass::Interior)
                k.interior_residual_inf = std::max(k.interior_residual_inf, std::abs(res[i]));
            else if (g.node_class[i] == NodeClass::Thin) {
                const double sigma = res[i] / thin_measure;
                k.thin_complementarity_inf =
                    std::max(k.thin_complementarity_inf, std::abs(std::min(u[i], sigma)));
                k.feasibility_inf = std::max(k.feasibility_inf, std::max(0.0, -u[i]));
            }
        }
        return k;
    };

    double e_cur = energy(u.values);
    rep.energy_history.push_back(e_cur);
    double bb_step = 1.0;
    bool ill_posed = false;

    for (int it = 0; it < cfg.max_iterations; ++it) {
        r = discrete_residual(u, model);
        rep.kkt = compute_kkt(r);
        if (rep.kkt.within(cfg.tol_kkt)) {
            rep.status = SolveStatus::Converged;
            rep.iterations = it;
            break;
        }

        bool accepted = false;
        const bool use_newton = cfg.method == SolveConfig::Method::ActiveSetNewton;

        if (use_newton) {
            for (std::size_t i = 0; i < n; ++i) {
                const bool active_bound = g.node_class[i] == NodeClass::Thin &&
                                          u[i] <= 1e-14 && r[i] > 0.0;
                free_mask[i] = g.node_class[i] != NodeClass::Dirichlet && !active_bound;
            }
            const auto diag = detail::hessian_diagonal(g, asmb, model, u.values);
            std::fill(dir.begin(), dir.end(), 0.0);
            std::vector<double> rhs(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                if (free_mask[i]) rhs[i] = -r[i];
            auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
                detail::hessian_apply(g, asmb, model, u.values, free_mask, v, out);
            };
            const auto cgres = detail::pcg(apply, rhs, dir, diag, free_mask, cfg.linear_tol, max_lin);
            if (!cgres.negative_curvature) {
                // Armijo backtracking along the projected Newton path.
                double slope = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (free_mask[i]) slope += r[i] * dir[i];
                double t = 1.0;
                for (int ls = 0; ls < 60 && !accepted; ++ls, t *= 0.5) {
                    u_trial = u.values;
                    for (std::size_t i = 0; i < n; ++i)
                        if (free_mask[i]) u_trial[i] += t * dir[i];
                    detail::project_feasible(g, u_trial);
                    const double e_new = energy(u_trial);
                    if (e_new <= e_cur + cfg.armijo_c1 * t * slope ||
                        (slope >= 0.0 && e_new < e_cur)) {
                        u.values = u_trial;
                        e_cur = e_new;
                        accepted = true;
                    }
                }
            }
        }

        if (!accepted) {
            // Projected gradient with a BB step and monotone backtracking.
            if (!r_prev.empty()) {
                double sy = 0.0, ss = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (g.node_class[i] == NodeClass::Dirichlet) continue;
                    const double s = u.values[i] - u_prev[i];
                    const double y = r[i] - r_prev[i];
                    sy += s * y;
                    ss += s * s;
                }
                if (sy > 0.0) bb_step = std::clamp(ss / sy, cfg.bb_step_min, cfg.bb_step_max);
            }
            double t = bb_step;
            for (int ls = 0; ls < 80 && !accepted; ++ls, t *= 0.5) {
                u_trial = u.values;
                for (std::size_t i = 0; i < n; ++i)
                    if (g.node_class[i] != NodeClass::Dirichlet) u_trial[i] -= t * r[i];
                detail::project_feasible(g, u_trial);
                double decrease = 0.0;
                for (std::size_t i = 0; i < n; ++i) decrease += r[i] * (u_trial[i] - u.values[i]);
                const double e_new = energy(u_trial);
                if (e_new <= e_cur + cfg.armijo_c1 * decrease) {
                    u_prev = u.values;
                    r_prev = r;
                    u.values = u_trial;
                    e_cur = e_new;
                    accepted = true;
                }
            }
        }

        if (!accepted) {
            ill_posed = true;
            rep.iterations = it;
            break;
        }
        rep.energy_history.push_back(e_cur);
        rep.iterations = it + 1;
    }

    // Final certificate and trace diagnostics.
    r = discrete_residual(u, model);
    rep.kkt = compute_kkt(r);
    if (rep.kkt.within(cfg.tol_kkt))
        rep.status = SolveStatus::Converged;
    else
        rep.status = ill_posed ? SolveStatus::IllPosed : SolveStatus::NonConverged;

    for (std::size_t i = 0; i < n; ++i) {
        if (g.node_class[i] != NodeClass::Thin) continue;
        rep.thin_nodes.push_back(i);
        const double sigma = r[i] / thin_measure;
        rep.sigma_n.push_back(sigma);
        if (u[i] <= 1e-12) {
            rep.active_set.push_back(i);
            if (std::abs(sigma) <= cfg.tol_kkt) rep.degenerate_set.push_back(i);
        }
    }
    asmb.for_each_cell([&](std::size_t base) {
        rep.max_gradient_norm =
            std::max(rep.max_gradient_norm, norm(asmb.cell_gradient(u.values, base)));
    });
    rep.exceeded_t_bar = rep.max_gradient_norm > model.t_bar;
    rep.lambda_on_range = radial_eigenvalue_floor(model, std::max(rep.max_gradient_norm, 1e-6));
    return {std::move(u), rep};
}

}  // namespace thob
