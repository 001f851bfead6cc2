#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "thob/detail/rng.hpp"
#include "thob/oracle.hpp"
#include "thob/solver.hpp"

using namespace thob;

namespace {

// Independent hand assembly of the cell-based energy gradient on a 2D grid:
// explicit corner loops, no shared machinery with the implementation.
std::vector<double> hand_residual_2d(const ScalarField& u) {
    const Grid& g = *u.grid;
    REQUIRE(g.dim == 2);
    const double hx = g.spacing[0], hy = g.spacing[1];
    const double vol = hx * hy;
    const int nx = g.npts[0], ny = g.npts[1];
    auto at = [&](int i, int j) { return u.values[std::size_t(i * ny + j)]; };
    std::vector<double> r(g.node_count(), 0.0);
    for (int i = 0; i + 1 < nx; ++i) {
        for (int j = 0; j + 1 < ny; ++j) {
            const double gx =
                (at(i + 1, j) + at(i + 1, j + 1) - at(i, j) - at(i, j + 1)) / (2.0 * hx);
            const double gy =
                (at(i, j + 1) + at(i + 1, j + 1) - at(i, j) - at(i + 1, j)) / (2.0 * hy);
            // quadratic model: flux = gradient
            const double bx = 1.0 / (2.0 * hx), by = 1.0 / (2.0 * hy);
            r[std::size_t(i * ny + j)] += vol * (-gx * bx - gy * by);
            r[std::size_t((i + 1) * ny + j)] += vol * (gx * bx - gy * by);
            r[std::size_t(i * ny + j + 1)] += vol * (-gx * bx + gy * by);
            r[std::size_t((i + 1) * ny + j + 1)] += vol * (gx * bx + gy * by);
        }
    }
    for (std::size_t k = 0; k < g.node_count(); ++k)
        if (g.node_class[k] == NodeClass::Dirichlet) r[k] = 0.0;
    return r;
}

ScalarField random_field(GridPtr g, detail::Rng& rng, double amp = 1.0) {
    ScalarField u(g);
    for (auto& v : u.values) v = rng.uniform(-amp, amp);
    return u;
}

}  // namespace

TEST_CASE("discrete_energy: closed forms for linear fields") {
    auto g = build_half_grid(2, {17, 9, 1});
    const auto zero = ScalarField(g);
    CHECK(discrete_energy(zero, make_quadratic()) == 0.0);

    const auto ramp = sample_field(g, [](Vec3 x) { return x[0]; });
    // |domain| = 2, f(e_1) = h(1): quadratic 1/2, minimal surface sqrt(2)-1
    CHECK(discrete_energy(ramp, make_quadratic()) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(discrete_energy(ramp, make_minimal_surface()) ==
          doctest::Approx(2.0 * (std::sqrt(2.0) - 1.0)).epsilon(1e-13));
}

TEST_CASE("discrete_residual matches hand assembly entrywise on the 5x3 grid") {
    auto g = build_half_grid(2, {5, 3, 1});
    detail::Rng rng(0x51u);
    const auto u = random_field(g, rng);
    const auto got = discrete_residual(u, make_quadratic());
    const auto want = hand_residual_2d(u);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("discrete_residual stencil: unit interior bump on the 5x3 grid") {
    // One-point-quadrature bilinear cells couple each node to itself with
    // weight 2 and to its diagonal neighbours with weight -1/2 (quadratic
    // model, square cells): checked against the hand-derived values.
    auto g = build_half_grid(2, {5, 3, 1});
    ScalarField u(g);
    const std::size_t center = g->index({2, 1, 0});
    u[center] = 1.0;
    const auto r = discrete_residual(u, make_quadratic());
    CHECK(r[center] == doctest::Approx(2.0).epsilon(1e-13));
    CHECK(r[g->index({1, 1, 0})] == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(r[g->index({3, 1, 0})] == doctest::Approx(0.0).epsilon(1e-13));
    // diagonal neighbours on the thin face (the others are Dirichlet-masked)
    CHECK(r[g->index({1, 0, 0})] == doctest::Approx(-0.5).epsilon(1e-13));
    CHECK(r[g->index({3, 0, 0})] == doctest::Approx(-0.5).epsilon(1e-13));
}

TEST_CASE("discrete_residual: constant fields are stationary away from Dirichlet") {
    auto g = build_half_grid(3, {7, 7, 5});
    const auto u = sample_field(g, [](Vec3) { return 0.7; });
    for (const auto& m : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        const auto r = discrete_residual(u, m);
        for (std::size_t i = 0; i < g->node_count(); ++i)
            if (g->node_class[i] != NodeClass::Dirichlet) CHECK(std::abs(r[i]) < 1e-14);
    }
}

TEST_CASE("discrete_residual: thin entry is the scaled conormal trace") {
    // u = x_n has flux e_n, so sigma_n = -1 and the thin-node entry equals
    // -1 times the tangential patch measure.
    auto g = build_half_grid(2, {5, 3, 1});
    const auto u = sample_field(g, [](Vec3 x) { return x[1]; });
    const auto r = discrete_residual(u, make_quadratic());
    for (std::size_t i = 0; i < g->node_count(); ++i)
        if (g->node_class[i] == NodeClass::Thin)
            CHECK(r[i] == doctest::Approx(-0.5).epsilon(1e-13));
}

TEST_CASE("gradient consistency: residual vs finite differences of the energy") {
    for (int dim : {2, 3}) {
        auto g = dim == 2 ? build_half_grid(2, {9, 5, 1}) : build_half_grid(3, {5, 5, 3});
        detail::Rng rng(0xabcDu + std::uint64_t(dim));
        for (const auto& m :
             {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
            CAPTURE(m.name);
            auto u = random_field(g, rng, 0.5);
            const auto r = discrete_residual(u, m);
            const double step = 1e-6;
            double worst = 0.0, scale_ref = 0.0;
            for (std::size_t i = 0; i < g->node_count(); i += 3) {
                if (g->node_class[i] == NodeClass::Dirichlet) continue;
                const double keep = u[i];
                u[i] = keep + step;
                const double ep = discrete_energy(u, m);
                u[i] = keep - step;
                const double em = discrete_energy(u, m);
                u[i] = keep;
                const double fd = (ep - em) / (2.0 * step);
                worst = std::max(worst, std::abs(fd - r[i]));
                scale_ref = std::max(scale_ref, std::abs(r[i]));
            }
            CHECK(worst / std::max(scale_ref, 1e-12) <= 1e-6);
        }
    }
}

TEST_CASE("energy is midpoint convex along random segments") {
    auto g = build_half_grid(2, {9, 5, 1});
    detail::Rng rng(0x77u);
    for (const auto& m : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto u = random_field(g, rng);
            const auto v = random_field(g, rng);
            ScalarField mid(g);
            for (std::size_t i = 0; i < g->node_count(); ++i) mid[i] = 0.5 * (u[i] + v[i]);
            CHECK(discrete_energy(mid, m) <=
                  0.5 * (discrete_energy(u, m) + discrete_energy(v, m)) + 1e-12);
        }
    }
}

TEST_CASE("solve: constant boundary data is solved at the initial iterate") {
    auto g = build_half_grid(2, {9, 5, 1});
    const auto model = make_quadratic();
    auto cfg = SolveConfig::for_model(model);
    const auto [u, rep] = solve_signorini(g, model, constant_boundary(1.0), cfg);
    CHECK(rep.status == SolveStatus::Converged);
    CHECK(rep.iterations == 0);
    CHECK(rep.active_set.empty());
    CHECK(rep.kkt.interior_residual_inf <= 1e-14);
    CHECK(rep.kkt.thin_complementarity_inf <= 1e-14);
    for (double v : u.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("solve: oracle boundary data reproduces the exact field") {
    const ExactSignoriniSolution sol(1.0, 2);
    auto g = build_half_grid(2, {65, 33, 1});
    const auto model = make_quadratic();
    auto cfg = SolveConfig::for_model(model);
    const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(sol), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    CHECK(rep.kkt.interior_residual_inf <= cfg.tol_kkt);
    CHECK(rep.kkt.thin_complementarity_inf <= cfg.tol_kkt);
    CHECK(rep.kkt.feasibility_inf <= cfg.tol_kkt);

    double max_err = 0.0;
    for (std::size_t i = 0; i < g->node_count(); ++i)
        max_err = std::max(max_err, std::abs(u[i] - sol.value(g->position(i))));
    CHECK(max_err <= 5.0 * g->spacing[0]);

    // Active set: thin nodes with x_1 < 0, up to one cell around the origin.
    for (std::size_t i : rep.thin_nodes) {
        const double x1 = g->position(i)[0];
        const bool active =
            std::find(rep.active_set.begin(), rep.active_set.end(), i) != rep.active_set.end();
        if (x1 < -g->spacing[0] - 1e-12) CHECK(active);
        if (x1 > g->spacing[0] + 1e-12) CHECK(!active);
    }

    // Sign condition on the active set.
    for (std::size_t t = 0; t < rep.thin_nodes.size(); ++t) {
        if (u[rep.thin_nodes[t]] <= 1e-12) CHECK(rep.sigma_n[t] >= -cfg.tol_kkt);
    }

    // Energy history is nonincreasing.
    for (std::size_t k = 1; k < rep.energy_history.size(); ++k)
        CHECK(rep.energy_history[k] <= rep.energy_history[k - 1] + 1e-14);
}

TEST_CASE("solve: projected gradient agrees with active-set Newton") {
    const ExactSignoriniSolution sol(1.0, 2);
    auto g = build_half_grid(2, {17, 9, 1});
    const auto model = make_minimal_surface();
    auto newton_cfg = SolveConfig::for_model(model);
    auto pg_cfg = newton_cfg;
    pg_cfg.method = SolveConfig::Method::ProjectedGradient;
    pg_cfg.max_iterations = 20000;
    const auto [u_newton, rep_n] = solve_signorini(g, model, oracle_trace_boundary(sol), newton_cfg);
    const auto [u_pg, rep_p] = solve_signorini(g, model, oracle_trace_boundary(sol), pg_cfg);
    REQUIRE(rep_n.status == SolveStatus::Converged);
    REQUIRE(rep_p.status == SolveStatus::Converged);
    CHECK(discrete_energy(u_pg, model) ==
          doctest::Approx(discrete_energy(u_newton, model)).epsilon(1e-10));
    double max_diff = 0.0;
    for (std::size_t i = 0; i < g->node_count(); ++i)
        max_diff = std::max(max_diff, std::abs(u_pg[i] - u_newton[i]));
    CHECK(max_diff < 1e-5);
}

TEST_CASE("solve: grid convergence at first order or better") {
    const ExactSignoriniSolution sol(1.0, 2);
    const auto model = make_quadratic();
    std::vector<double> errors;
    for (int n : {33, 65, 129}) {
        auto g = build_half_grid(2, {n, (n + 1) / 2, 1});
        auto cfg = SolveConfig::for_model(model);
        const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(sol), cfg);
        REQUIRE(rep.status == SolveStatus::Converged);
        double e = 0.0;
        for (std::size_t i = 0; i < g->node_count(); ++i)
            e = std::max(e, std::abs(u[i] - sol.value(g->position(i))));
        errors.push_back(e);
    }
    CHECK(std::log2(errors[0] / errors[1]) >= 1.0);
    CHECK(std::log2(errors[1] / errors[2]) >= 1.0);
}

TEST_CASE("kkt_residuals: consistency of the injected exact field at first order") {
    const ExactSignoriniSolution sol(1.0, 2);
    const auto model = make_quadratic();
    std::vector<double> interior;
    for (int n : {33, 65, 129}) {
        auto g = build_half_grid(2, {n, (n + 1) / 2, 1});
        const auto u = sample_field(g, [&](Vec3 x) { return sol.value(x); });
        const auto k = kkt_residuals(u, model, oracle_trace_boundary(sol));
        CHECK(k.feasibility_inf <= 1e-12);
        interior.push_back(k.interior_residual_inf);
    }
    CHECK(std::log2(interior[0] / interior[1]) >= 0.9);
    CHECK(std::log2(interior[1] / interior[2]) >= 0.9);
}

TEST_CASE("kkt_residuals: feasibility reports the violation magnitude") {
    auto g = build_half_grid(2, {9, 5, 1});
    const auto model = make_quadratic();
    auto cfg = SolveConfig::for_model(model);
    auto [u, rep] = solve_signorini(g, model, constant_boundary(1.0), cfg);
    std::size_t thin = 0;
    for (std::size_t i = 0; i < g->node_count(); ++i)
        if (g->node_class[i] == NodeClass::Thin) thin = i;
    u[thin] = -0.01;
    const auto k = kkt_residuals(u, model, constant_boundary(1.0));
    CHECK(k.feasibility_inf == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("solve: exhausted budgets report honestly with the best iterate") {
    const ExactSignoriniSolution sol(1.0, 2);
    auto g = build_half_grid(2, {17, 9, 1});
    const auto model = make_quadratic();

    SUBCASE("iteration cap yields NON_CONVERGED") {
        auto cfg = SolveConfig::for_model(model);
        cfg.max_iterations = 1;
        cfg.tol_kkt = 1e-14;
        const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(sol), cfg);
        CHECK(rep.status == SolveStatus::NonConverged);
        CHECK(rep.kkt.feasibility_inf == 0.0);  // best iterate is still feasible
        CHECK(!rep.energy_history.empty());
    }
    SUBCASE("unreachable tolerance stalls at machine precision") {
        auto cfg = SolveConfig::for_model(model);
        cfg.tol_kkt = 1e-30;
        cfg.max_iterations = 50;
        const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(sol), cfg);
        CHECK(rep.status != SolveStatus::Converged);
        // ... but the iterate itself is solved to machine precision.
        CHECK(rep.kkt.interior_residual_inf <= 1e-12);
    }
}

TEST_CASE("boundary validation rejects bad data") {
    auto g = build_half_grid(2, {9, 5, 1});
    const auto model = make_quadratic();
    auto cfg = SolveConfig::for_model(model);
    BoundaryData nanny{[](Vec3 x) { return x[0] > 0.5 ? std::nan("") : 1.0; }, true};
    CHECK_THROWS_AS(solve_signorini(g, model, nanny, cfg), std::invalid_argument);
    BoundaryData negative_rim{[](Vec3 x) { return x[1] - 0.5 * std::abs(x[0]); }, true};
    CHECK_THROWS_AS(solve_signorini(g, model, negative_rim, cfg), std::invalid_argument);
}
