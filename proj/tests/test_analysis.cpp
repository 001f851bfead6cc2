#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "thob/analysis.hpp"

using namespace thob;

namespace {

const ExactSignoriniSolution& oracle2d() {
    static const ExactSignoriniSolution sol(1.0, 2);
    return sol;
}

struct InjectedField {
    ScalarField u;
    VectorField grad;
};

template <class F>
InjectedField inject(GridPtr g, F&& f) {
    InjectedField out;
    out.u = sample_field(g, std::forward<F>(f));
    out.grad = node_gradient_field(out.u);
    return out;
}

// Independent scalar bisection on the explicit synthetic sequence; the
// implementation must reproduce this value (frozen below).
double bisection_oracle(const std::vector<double>& rho, const std::vector<double>& N,
                        double alpha) {
    auto monotone = [&](double c) {
        for (std::size_t i = 0; i + 1 < rho.size(); ++i) {
            const double w0 = std::exp(c / alpha * std::pow(rho[i], alpha)) * N[i];
            const double w1 = std::exp(c / alpha * std::pow(rho[i + 1], alpha)) * N[i + 1];
            if (w1 < w0) return false;
        }
        return true;
    };
    if (monotone(0.0)) return 0.0;
    double lo = 0.0, hi = 1000.0;
    for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (lo + hi);
        (monotone(mid) ? hi : lo) = mid;
    }
    return hi;
}

}  // namespace

TEST_CASE("D, H, N closed forms for the injected homogeneous profile") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    const auto model = make_quadratic();
    for (double rho : {0.1, 0.2, 0.4}) {
        // D = (3 pi / 4) rho^3, H = (pi / 2) rho^3, N = 3/2
        const double D = compute_D(f.u, f.grad, model, {0, 0, 0}, rho);
        const double H = compute_H(f.u, {0, 0, 0}, rho);
        CHECK(D == doctest::Approx(0.75 * std::numbers::pi * rho * rho * rho).epsilon(2e-3));
        CHECK(H == doctest::Approx(0.5 * std::numbers::pi * rho * rho * rho).epsilon(2e-3));
        CHECK(compute_N(f.u, f.grad, model, {0, 0, 0}, rho) == doctest::Approx(1.5).epsilon(0.02));
    }
}

TEST_CASE("N of a degree-1 homogeneous field is 1") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto f = inject(g, [](Vec3 x) { return x[0]; });
    for (double rho : {0.1, 0.3})
        CHECK(compute_N(f.u, f.grad, make_quadratic(), {0, 0, 0}, rho) ==
              doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("vanishing fields raise the degenerate-scale error") {
    auto g = build_half_grid(2, {33, 17, 1});
    const auto f = inject(g, [](Vec3) { return 0.0; });
    CHECK_THROWS_AS(compute_N(f.u, f.grad, make_quadratic(), {0, 0, 0}, 0.2), DegenerateScale);
    CHECK_THROWS_AS(frequency_profile(f.u, f.grad, make_quadratic(), {0, 0, 0}, 0.05, 0.4),
                    std::runtime_error);
}

TEST_CASE("frequency profile of the homogeneous field: constant N and exact doubling") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    const auto prof = frequency_profile(f.u, f.grad, make_quadratic(), {0, 0, 0}, 0.05, 0.4);
    REQUIRE(prof.rho.size() >= 4);
    for (std::size_t k = 0; k < prof.rho.size(); ++k) {
        CHECK(prof.N[k] == doctest::Approx(1.5).epsilon(0.0134));  // |N - 1.5| <= 0.02
        CHECK(prof.doubling[k] == doctest::Approx(std::pow(2.0, 1.5)).epsilon(0.00708));
    }
    CHECK(prof.n_max() - prof.n_min() <= 0.02);
    CHECK(prof.gamma_fit >= 1.0);
    CHECK(prof.dropped.empty());
}

TEST_CASE("frequency profile of a constant field: vanishing N, unit doubling") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto f = inject(g, [](Vec3) { return 0.7; });
    const auto prof = frequency_profile(f.u, f.grad, make_quadratic(), {0, 0, 0}, 0.05, 0.4);
    for (std::size_t k = 0; k < prof.rho.size(); ++k) {
        CHECK(std::abs(prof.N[k]) < 1e-10);
        CHECK(prof.doubling[k] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("scaling covariance for the quadratic energy") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto base = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    const auto model = make_quadratic();
    for (double c : {2.0, 3.7}) {
        InjectedField scaled;
        scaled.u = ScalarField(g);
        for (std::size_t i = 0; i < g->node_count(); ++i) scaled.u[i] = c * base.u[i];
        scaled.grad = node_gradient_field(scaled.u);
        for (double rho : {0.1, 0.3}) {
            const double D0 = compute_D(base.u, base.grad, model, {0, 0, 0}, rho);
            const double H0 = compute_H(base.u, {0, 0, 0}, rho);
            const double D1 = compute_D(scaled.u, scaled.grad, model, {0, 0, 0}, rho);
            const double H1 = compute_H(scaled.u, {0, 0, 0}, rho);
            CHECK(D1 == doctest::Approx(c * c * D0).epsilon(1e-12));
            CHECK(H1 == doctest::Approx(c * c * H0).epsilon(1e-12));
            CHECK(D1 / H1 == doctest::Approx(D0 / H0).epsilon(1e-12));
        }
        // Contact set is unchanged when the threshold scales along.
        const auto fb0 = extract_contact_set(base.u, 1e-9);
        const auto fb1 = extract_contact_set(scaled.u, c * 1e-9);
        CHECK(fb0.contact_nodes == fb1.contact_nodes);
        REQUIRE(fb0.free_boundary_cells.size() == fb1.free_boundary_cells.size());
    }
}

TEST_CASE("monotonicity fit: already monotone profiles need no correction") {
    FrequencyProfile prof;
    prof.rho = {0.1, 0.2, 0.3, 0.4};
    SUBCASE("constant") { prof.N = {1.5, 1.5, 1.5, 1.5}; }
    SUBCASE("strictly increasing") { prof.N = {1.2, 1.3, 1.45, 1.5}; }
    const auto rep = monotonicity_fit(prof, 0.5, 0.0);
    CHECK(rep.monotonizable);
    CHECK(rep.fitted_c == 0.0);
}

TEST_CASE("monotonicity fit: alternating synthetic profile matches the bisection oracle") {
    FrequencyProfile prof;
    for (int k = 7; k >= 0; --k) {  // ascending radii
        prof.rho.push_back(0.4 * std::pow(2.0, -0.5 * k));
        prof.N.push_back(1.5 + 0.01 * ((k % 2 == 0) ? 1.0 : -1.0));
    }
    const auto rep = monotonicity_fit(prof, 0.5, 0.0);
    CHECK(rep.monotonizable);
    // Frozen from the independent bisection oracle run on this sequence.
    CHECK(rep.fitted_c == doctest::Approx(0.157576956890798).epsilon(1e-9));
    CHECK(rep.fitted_c == doctest::Approx(bisection_oracle(prof.rho, prof.N, 0.5)).epsilon(1e-9));
    // The fitted weight really monotonizes the sequence.
    for (std::size_t k = 0; k + 1 < prof.rho.size(); ++k) {
        const double w0 = std::exp(2.0 * rep.fitted_c * std::sqrt(prof.rho[k])) * prof.N[k];
        const double w1 = std::exp(2.0 * rep.fitted_c * std::sqrt(prof.rho[k + 1])) * prof.N[k + 1];
        CHECK(w1 - w0 >= -1e-9);
    }
}

TEST_CASE("monotonicity fit: steep decay defeats the correction budget") {
    // Halving N across near-identical radii needs C ~ alpha ln 2 / d(rho^alpha)
    // ~ 44, beyond the budget of 10 passed here.
    FrequencyProfile prof;
    prof.rho = {0.40, 0.41, 0.42, 0.43};
    prof.N = {16.0, 8.0, 4.0, 2.0};
    const auto rep = monotonicity_fit(prof, 0.5, 0.0, 10.0);
    CHECK(!rep.monotonizable);
    CHECK(!rep.violations.empty());
}

TEST_CASE("power-law fit recovers synthetic exponents exactly") {
    std::vector<double> rho, val;
    for (int k = 0; k < 9; ++k) {
        rho.push_back(0.05 * std::pow(1.3, k));
        val.push_back(0.37 * std::pow(rho.back(), 1.5));
    }
    const auto fit = fit_power_law(rho, val);
    CHECK(std::abs(fit.slope - 1.5) <= 1e-10);
    CHECK(fit.residual <= 1e-10);
}

TEST_CASE("decay fits on the injected homogeneous profile") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    const auto ladder = radius_ladder(0.05, 0.4);
    CHECK(decay_fit(f.u, f.grad, {0, 0, 0}, ladder, DecayNorm::L2Average).slope ==
          doctest::Approx(1.5).epsilon(0.05 / 1.5));
    CHECK(decay_fit(f.u, f.grad, {0, 0, 0}, ladder, DecayNorm::Sup).slope ==
          doctest::Approx(1.5).epsilon(0.05 / 1.5));
    CHECK(decay_fit(f.u, f.grad, {0, 0, 0}, ladder, DecayNorm::SupGradient).slope ==
          doctest::Approx(0.5).epsilon(0.1 / 0.5));
}

TEST_CASE("decay fit: even reflection of x1*xn has homogeneity two at the origin") {
    // u = x1 xn vanishes on the whole thin face, so the origin is interior
    // to the contact set; the field is 2-homogeneous about it. The grid is
    // fine enough that the node-sampled sup is resolved at the smallest radius.
    auto g = build_half_grid(2, {257, 129, 1});
    const auto f = inject(g, [](Vec3 x) { return x[0] * x[1]; });
    const auto fit =
        decay_fit(f.u, f.grad, {0, 0, 0}, radius_ladder(0.1, 0.45), DecayNorm::Sup);
    CHECK(fit.slope == doctest::Approx(2.0).epsilon(0.05 / 2.0));
}

TEST_CASE("decay fit input validation") {
    auto g = build_half_grid(2, {33, 17, 1});
    const auto f = inject(g, [](Vec3) { return 0.0; });
    CHECK_THROWS_AS(decay_fit(f.u, f.grad, {0, 0, 0}, {0.1, 0.2}, DecayNorm::Sup),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        decay_fit(f.u, f.grad, {0, 0, 0}, {0.1, 0.15, 0.2, 0.25, 0.3}, DecayNorm::Sup),
        std::runtime_error);
}

TEST_CASE("dichotomy scan: homogeneous profile never triggers at delta = 0.1") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    for (const auto& flag : dichotomy_scan(f.u, {0, 0, 0}, 0.1, {0.4, 0.2, 0.1})) {
        CHECK(!flag.triggered);  // ratios are 2^{1.5} < 2^{1.6}
        CHECK(flag.hypothesis_ratio == doctest::Approx(std::pow(2.0, 1.5)).epsilon(0.02));
    }
}

TEST_CASE("dichotomy scan: a steeper power triggers and satisfies the conclusion") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [](Vec3 x) { return std::pow(norm(x), 1.8); });
    const auto flags = dichotomy_scan(f.u, {0, 0, 0}, 0.1, {0.4, 0.2});
    for (const auto& flag : flags) {
        CHECK(flag.triggered);
        CHECK(!flag.violated);
    }
}

TEST_CASE("dichotomy scan: constant fields never trigger") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto f = inject(g, [](Vec3) { return 1.0; });
    for (const auto& flag : dichotomy_scan(f.u, {0, 0, 0}, 0.1, {0.4, 0.2}))
        CHECK(!flag.triggered);
}

TEST_CASE("blowup of the exact profile: unit norms, vanishing distances, degree 3/2") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto u = sample_field(g, [&](Vec3 x) { return oracle2d().value(x); });
    auto tgt = build_half_grid(2, {65, 33, 1});
    const auto bu = blowup(u, {0, 0, 0}, {0.4, 0.2, 0.1, 0.05}, tgt);
    REQUIRE(bu.radii.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(bu.unit_norm[j] - 1.0) <= 1e-10);
        CHECK(bu.c0_distance[j] <= 1e-4);
        CHECK(bu.c1_distance[j] <= 1e-3);
        // amplitude of the normalized profile is 1/||phi||_{L2 avg} = sqrt(10/pi)
        CHECK(bu.amplitude[j] == doctest::Approx(std::sqrt(10.0 / std::numbers::pi)).epsilon(1e-3));
    }
    CHECK(bu.fitted_degree == doctest::Approx(1.5).epsilon(0.02 / 1.5));
}

TEST_CASE("blowup rejects windows leaving the source domain") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto u = sample_field(g, [&](Vec3 x) { return oracle2d().value(x); });
    auto tgt = build_half_grid(2, {33, 17, 1});
    CHECK_THROWS_AS(blowup(u, {0.7, 0, 0}, {0.4, 0.2}, tgt), std::invalid_argument);
    CHECK_THROWS_AS(blowup(u, {0, 0, 0}, {0.2, 0.4}, tgt), std::invalid_argument);
}

TEST_CASE("contact set extraction on the injected profile") {
    auto g = build_half_grid(2, {65, 33, 1});
    const auto u = sample_field(g, [&](Vec3 x) { return oracle2d().value(x); });
    const auto fb = extract_contact_set(u, 1e-9);
    for (std::size_t i : fb.contact_nodes) CHECK(g->position(i)[0] < 1e-12);
    // every thin node with x1 < 0 is in contact
    std::size_t negative_thin = 0;
    for (std::size_t i = 0; i < g->node_count(); ++i)
        if (g->node_class[i] == NodeClass::Thin && g->position(i)[0] < -1e-12) ++negative_thin;
    CHECK(fb.contact_nodes.size() >= negative_thin);
    REQUIRE(fb.free_boundary_cells.size() == 1);
    CHECK(std::abs(fb.free_boundary_cells[0].centroid[0]) <= g->spacing[0]);
    const auto anchor = nearest_contact_anchor(fb, *g, {0, 0, 0});
    REQUIRE(anchor.has_value());
    CHECK(std::abs((*anchor)[0]) <= g->spacing[0] + 1e-12);
}

TEST_CASE("contact set extremes: full and empty contact") {
    auto g = build_half_grid(2, {33, 17, 1});
    const auto ones = sample_field(g, [](Vec3) { return 1.0; });
    const auto fb1 = extract_contact_set(ones, 1e-7);
    CHECK(fb1.contact_nodes.empty());
    CHECK(fb1.free_boundary_cells.empty());

    const auto zeros = ScalarField(g);
    const auto fb0 = extract_contact_set(zeros, 1e-7);
    std::size_t thin_count = 0;
    for (auto c : g->node_class)
        if (c == NodeClass::Thin) ++thin_count;
    CHECK(fb0.contact_nodes.size() == thin_count);
    CHECK(fb0.free_boundary_cells.empty());
}

TEST_CASE("symmetrization: globally linear extensions have vanishing residual") {
    auto g = build_half_grid(2, {33, 17, 1});
    SUBCASE("odd extension of xn across a fully-contact trace") {
        const auto u = sample_field(g, [](Vec3 x) { return x[1]; });
        const auto check = symmetrize_and_check(u, make_quadratic(), {0.0, 0.3, 0.0}, 0.25,
                                                SymmetrizationParity::Odd, 1e-9);
        CHECK(check.max_residual <= 1e-12);
        CHECK(check.nodes_checked > 0);
    }
    SUBCASE("even extension of x1 across a contact-free trace") {
        // Shift keeps the thin trace of u strictly positive.
        const auto u = sample_field(g, [](Vec3 x) { return x[0] + 2.0; });
        for (const auto& model : {make_quadratic(), make_minimal_surface()}) {
            const auto check = symmetrize_and_check(u, model, {0.0, 0.2, 0.0}, 0.3,
                                                    SymmetrizationParity::Even, 1e-9);
            CHECK(check.max_residual <= 1e-10);
        }
    }
}

TEST_CASE("symmetrization preconditions are enforced with offending nodes listed") {
    auto g = build_half_grid(2, {33, 17, 1});
    const auto u = sample_field(g, [&](Vec3 x) { return oracle2d().value(x); });
    // Even reflection over a ball whose trace includes contact: rejected.
    try {
        symmetrize_and_check(u, make_quadratic(), {-0.5, 0.1, 0.0}, 0.3,
                             SymmetrizationParity::Even, 1e-9);
        FAIL("expected SymmetrizationError");
    } catch (const SymmetrizationError& e) {
        CHECK(!e.offending_nodes.empty());
    }
    CHECK_THROWS_AS(symmetrize_and_check(u, make_quadratic(), {0.5, 0.1, 0.0}, 0.3,
                                         SymmetrizationParity::Odd, 1e-9),
                    SymmetrizationError);
}

TEST_CASE("symmetrization residual decreases at first order under refinement") {
    // Fixed evaluation region across grids: the margin of the coarsest one.
    const double margin = 1.5 * std::sqrt(2.0) / 16.0;
    std::vector<double> odd_res, even_res;
    for (int n : {33, 65, 129}) {
        auto g = build_half_grid(2, {n, (n + 1) / 2, 1});
        const auto u = sample_field(g, [&](Vec3 x) { return oracle2d().value(x); });
        odd_res.push_back(symmetrize_and_check(u, make_quadratic(), {-0.5, 0.1, 0.0}, 0.3,
                                               SymmetrizationParity::Odd, 1e-9, margin)
                              .max_residual);
        even_res.push_back(symmetrize_and_check(u, make_quadratic(), {0.5, 0.1, 0.0}, 0.3,
                                                SymmetrizationParity::Even, 1e-9, margin)
                               .max_residual);
    }
    CHECK(std::log2(odd_res[0] / odd_res[1]) >= 1.0);
    CHECK(std::log2(odd_res[1] / odd_res[2]) >= 1.0);
    CHECK(std::log2(even_res[0] / even_res[1]) >= 1.0);
    CHECK(std::log2(even_res[1] / even_res[2]) >= 1.0);
}

TEST_CASE("sanity ratios match closed forms for injected fields") {
    auto g = build_half_grid(2, {129, 65, 1});
    SUBCASE("homogeneous profile: Poincare 2/15, trace 5") {
        const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
        const auto rep = sanity_inequalities(f.u, f.grad, {0, 0, 0}, {0.1, 0.2, 0.4});
        REQUIRE(rep.rho.size() == 3);
        for (double r : rep.poincare_ratio) CHECK(r == doctest::Approx(2.0 / 15.0).epsilon(5e-3));
        for (double r : rep.trace_ratio) CHECK(r == doctest::Approx(5.0).epsilon(5e-3));
        CHECK(!rep.poincare_flagged);
        CHECK(!rep.trace_flagged);
    }
    SUBCASE("linear field: Poincare 1/4, trace 4") {
        const auto f = inject(g, [](Vec3 x) { return x[0]; });
        const auto rep = sanity_inequalities(f.u, f.grad, {0, 0, 0}, {0.1, 0.2, 0.4});
        for (double r : rep.poincare_ratio) CHECK(r == doctest::Approx(0.25).epsilon(1e-6));
        for (double r : rep.trace_ratio) CHECK(r == doctest::Approx(4.0).epsilon(1e-6));
    }
    SUBCASE("zero field: all radii dropped") {
        const auto f = inject(g, [](Vec3) { return 0.0; });
        const auto rep = sanity_inequalities(f.u, f.grad, {0, 0, 0}, {0.1, 0.2});
        CHECK(rep.rho.empty());
        CHECK(rep.dropped.size() == 2);
    }
}

TEST_CASE("sanity ratios in dim 3: linear field Poincare 1/5, trace 5") {
    auto g = build_half_grid(3, {33, 33, 17});
    const auto f = inject(g, [](Vec3 x) { return x[0]; });
    const auto rep = sanity_inequalities(f.u, f.grad, {0, 0, 0}, {0.2, 0.4});
    REQUIRE(rep.rho.size() == 2);
    for (double r : rep.poincare_ratio) CHECK(r == doctest::Approx(0.2).epsilon(1e-6));
    for (double r : rep.trace_ratio) CHECK(r == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("frequency of the extruded profile in dim 3") {
    auto g = build_half_grid(3, {65, 65, 33});
    const ExactSignoriniSolution sol(1.0, 3);
    const auto f = inject(g, [&](Vec3 x) { return sol.value(x); });
    for (double rho : {0.2, 0.4})
        CHECK(compute_N(f.u, f.grad, make_quadratic(), {0, 0, 0}, rho) ==
              doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("frequency of a solved nonlinear run stays near 3/2") {
    // Minimal-surface energy with scaled profile trace data: the frequency
    // profile at the detected free-boundary point remains inside [1.4, 1.6]
    // down to rho = 0.05.
    auto g = build_half_grid(2, {129, 65, 1});
    const auto model = make_minimal_surface();
    const ExactSignoriniSolution scaled(0.1, 2);
    auto cfg = SolveConfig::for_model(model);
    const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(scaled), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    const auto grad = node_gradient_field(u);
    const auto fb = extract_contact_set(u, 10.0 * cfg.tol_kkt);
    const Vec3 center = nearest_free_boundary_center(fb, {0, 0, 0}).value();
    const auto prof = frequency_profile(u, grad, model, center, 0.05, 0.3);
    CHECK(prof.n_min() >= 1.4);
    CHECK(prof.n_max() <= 1.6);
}

TEST_CASE("dim-3 blowup recovers the tangential rotation of an extruded profile") {
    // Profile living in the (x2, xn) plane, extruded along x1: the fitted
    // rotation must land on beta = 90 degrees (mod 360).
    auto g = build_half_grid(3, {33, 33, 17});
    const ExactSignoriniSolution sol(1.0, 3, /*extrusion=*/0);
    const auto u = sample_field(g, [&](Vec3 x) { return sol.value(x); });
    auto tgt = build_half_grid(3, {17, 17, 9});
    const auto bu = blowup(u, {0, 0, 0}, {0.4, 0.2}, tgt);
    const double beta_deg = bu.rotation_angle * 180.0 / std::numbers::pi;
    const double folded = std::fmod(std::abs(beta_deg - 90.0), 360.0);
    CHECK(std::min(folded, 360.0 - folded) <= 2.0);
    for (double nu : bu.unit_norm) CHECK(std::abs(nu - 1.0) <= 1e-10);
    CHECK(bu.fitted_degree == doctest::Approx(1.5).epsilon(0.05));
    for (std::size_t j = 0; j < bu.radii.size(); ++j) {
        CHECK(bu.c0_distance[j] <= 5e-3);
        CHECK(bu.c1_distance[j] <= 1e-2);
    }
}

TEST_CASE("measured Holder exponent of the profile gradient is one half") {
    auto g = build_half_grid(2, {129, 65, 1});
    const auto f = inject(g, [&](Vec3 x) { return oracle2d().value(x); });
    const double alpha = estimate_holder_alpha(f.u, f.grad, {0, 0, 0}, radius_ladder(0.05, 0.4));
    CHECK(alpha == doctest::Approx(0.5).epsilon(0.2));
}
