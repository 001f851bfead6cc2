#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "thob/nonlinearity.hpp"

using namespace thob;

namespace {

// Central finite differences of f(p) = h(|p|), the independent route the
// analytic flux/Hessian are checked against.
double fd_flux_component(const NonlinearityModel& m, Vec3 p, int d, double step) {
    Vec3 hi = p, lo = p;
    hi[d] += step;
    lo[d] -= step;
    return (energy_density(m, hi) - energy_density(m, lo)) / (2.0 * step);
}

double fd_hessian_entry(const NonlinearityModel& m, Vec3 p, int i, int j, double step) {
    Vec3 pp = p, pm = p, mp = p, mm = p;
    pp[i] += step; pp[j] += step;
    pm[i] += step; pm[j] -= step;
    mp[i] -= step; mp[j] += step;
    mm[i] -= step; mm[j] -= step;
    return (energy_density(m, pp) - energy_density(m, pm) - energy_density(m, mp) +
            energy_density(m, mm)) /
           (4.0 * step * step);
}

}  // namespace

TEST_CASE("flux: quadratic model is the identity map") {
    const auto m = make_quadratic();
    const Vec3 p{0.3, -0.7, 0.0};
    const Vec3 f = flux(m, p);
    CHECK(f[0] == doctest::Approx(p[0]).epsilon(1e-14));
    CHECK(f[1] == doctest::Approx(p[1]).epsilon(1e-14));
    CHECK(omega1(m, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("flux: zero gradient gives zero flux for every model") {
    for (const auto& m : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        const Vec3 f = flux(m, Vec3{0, 0, 0});
        CHECK(f[0] == 0.0);
        CHECK(f[1] == 0.0);
        CHECK(f[2] == 0.0);
        CHECK(omega1(m, 0.0) == 0.0);
    }
}

TEST_CASE("flux: minimal-surface value at p=(1,0), cross-checked by finite differences") {
    const auto m = make_minimal_surface();
    const Vec3 p{1.0, 0.0, 0.0};
    const Vec3 f = flux(m, p);
    // h'(t) = t / sqrt(1+t^2), so h'(1) = 2^{-1/2}
    CHECK(f[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(f[1] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(f[0] - fd_flux_component(m, p, 0, 1e-5)) < 1e-9);
}

TEST_CASE("flux rejects non-finite input") {
    const auto m = make_quadratic();
    CHECK_THROWS_AS(flux(m, Vec3{std::nan(""), 0, 0}), std::domain_error);
    CHECK_THROWS_AS(omega1(m, -1.0), std::domain_error);
}

TEST_CASE("hessian: quadratic model gives the identity") {
    const auto m = make_quadratic();
    const Mat3 h = hessian(m, Vec3{0.4, 0.9, 0.0}, 2);
    CHECK(h[0][0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(h[1][1] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(h[0][1] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("hessian: minimal-surface at p=(1,0) and the p=0 limit") {
    const auto m = make_minimal_surface();
    const Mat3 h = hessian(m, Vec3{1.0, 0.0, 0.0}, 2);
    // radial eigenvalue h''(1) = 2^{-3/2}, tangential h'(1)/1 = 2^{-1/2}
    CHECK(h[0][0] == doctest::Approx(std::pow(2.0, -1.5)).epsilon(1e-14));
    CHECK(h[1][1] == doctest::Approx(std::pow(2.0, -0.5)).epsilon(1e-14));
    CHECK(h[0][1] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(h[0][0] - fd_hessian_entry(m, {1, 0, 0}, 0, 0, 1e-4)) < 1e-7);
    CHECK(std::abs(h[1][1] - fd_hessian_entry(m, {1, 0, 0}, 1, 1, 1e-4)) < 1e-7);

    for (const auto& model : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        const Mat3 at0 = hessian(model, Vec3{0, 0, 0}, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(at0[i][j] == doctest::Approx(i == j ? 1.0 : 0.0));
    }
}

TEST_CASE("omega1: minimal-surface value at t=1") {
    const auto m = make_minimal_surface();
    CHECK(omega1(m, 1.0) == doctest::Approx(1.0 / std::sqrt(2.0) - 1.0).epsilon(1e-14));
}

TEST_CASE("verify_structure: quadratic model at M=1") {
    const auto rep = verify_structure(make_quadratic(), 1.0, 200, 2);
    CHECK(rep.lambda_estimate == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.max_flux_remainder <= 1e-12);
    CHECK(rep.violations.empty());
    CHECK(rep.max_flux_fd_error <= 1e-6);
    CHECK(rep.max_hessian_fd_error <= 1e-5);
}

TEST_CASE("verify_structure: minimal-surface eigenvalue floor is 2^{-3/2} at M=1") {
    const auto rep = verify_structure(make_minimal_surface(), 1.0, 400, 2);
    // The radial eigenvalue (1+t^2)^{-3/2} decreases in t, so the floor sits
    // on |p| = M, which the probe set hits exactly.
    CHECK(std::abs(rep.lambda_estimate - std::pow(2.0, -1.5)) < 1e-6);
    CHECK(rep.remainder_ok);
    CHECK(rep.violations.empty());
    CHECK(rep.max_omega2_identity_error <= 1e-6);
    CHECK(rep.min_flux_monotonicity >= 0.0);
}

TEST_CASE("verify_structure: perturbed-quadratic remainder bound on M=0.5") {
    // On t <= 1/2 the cutoff is identically 1, so omega1 = 3ct and
    // h'' - 1 = 6ct: the remainder bound holds with C = 0.6 for c = 0.1.
    const auto m = make_perturbed_quadratic(0.1);
    const auto rep = verify_structure(m, 0.5, 300, 2);
    CHECK(rep.max_flux_remainder <= 0.6 + 1e-12);
    CHECK(rep.max_flux_remainder == doctest::Approx(0.3).epsilon(5e-3));
    CHECK(rep.remainder_ok);
    CHECK(rep.violations.empty());
}

TEST_CASE("perturbed-quadratic rejects destabilizing coefficients") {
    CHECK_THROWS_AS(make_perturbed_quadratic(0.5), std::invalid_argument);
}

TEST_CASE("structure invariants hold for all built-in models") {
    for (const auto& m : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        CAPTURE(m.name);
        const auto rep = verify_structure(m, 1.0, 300, 3, 0xfeedULL);
        CHECK(rep.max_flux_fd_error <= 1e-6);
        CHECK(rep.max_hessian_fd_error <= 1e-5);
        CHECK(rep.max_symmetry_error <= 1e-14);
        CHECK(rep.lambda_estimate > 0.0);
        CHECK(rep.max_omega2_identity_error <= 1e-6);
        CHECK(rep.min_flux_monotonicity >= -1e-12);
        CHECK(rep.remainder_ok);
    }
}

TEST_CASE("model lookup by configuration name") {
    CHECK(make_model("quadratic").name == "quadratic");
    CHECK(make_model("minimal_surface").name == "minimal_surface");
    CHECK(make_model("perturbed_quadratic", 0.05).name == "perturbed_quadratic");
    CHECK_THROWS_AS(make_model("fancy"), std::invalid_argument);
}

TEST_CASE("radial eigenvalue floor matches closed forms") {
    CHECK(radial_eigenvalue_floor(make_quadratic(), 2.0) == doctest::Approx(1.0));
    CHECK(radial_eigenvalue_floor(make_minimal_surface(), 1.0) ==
          doctest::Approx(std::pow(2.0, -1.5)).epsilon(1e-9));
}
