#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "thob/detail/linalg.hpp"
#include "thob/detail/rng.hpp"

namespace thob {

// Radial energy density f(p) = h(|p|) together with the derived maps the
// solver and the analysis consume. h, h1 = h', h2 = h'' are supplied
// analytically; finite differences are used only as cross-checks.
//
// Required structure: h(0) = h'(0) = 0, h''(t) -> 1 as t -> 0+, and
// |h'(t)/t - 1| and |h''(t) - 1| bounded by remainder_constant * t on
// (0, t_bar).
struct NonlinearityModel {
    std::string name;
    std::function<double(double)> h;
    std::function<double(double)> h1;
    std::function<double(double)> h2;
    double t_bar = 1.0;
    double remainder_constant = 0.0;
};

inline double energy_density(const NonlinearityModel& m, const Vec3& p) {
    return m.h(norm(p));
}

// omega1(t) = h'(t)/t - 1, extended by continuity with omega1(0) = 0.
inline double omega1(const NonlinearityModel& m, double t) {
    if (t < 0.0 || !std::isfinite(t)) throw std::domain_error("omega1: t must be finite and >= 0");
    if (t == 0.0) return 0.0;
    return m.h1(t) / t - 1.0;
}

// Flux grad_p f(p) = h'(|p|) p/|p|; zero at p = 0 and continuous there.
inline Vec3 flux(const NonlinearityModel& m, const Vec3& p) {
    if (!all_finite(p, 3)) throw std::domain_error("flux: non-finite gradient argument");
    const double t = norm(p);
    if (t == 0.0) return {0.0, 0.0, 0.0};
    const double s = m.h1(t) / t;
    return {s * p[0], s * p[1], s * p[2]};
}

// Hessian grad_p^2 f(p) = (h'(t)/t) Id + (h''(t) - h'(t)/t) (p x p)/t^2 with
// t = |p|. At p = 0 the limit forced by h''(0) = 1 is the identity.
inline Mat3 hessian(const NonlinearityModel& m, const Vec3& p, int dim) {
    if (!all_finite(p, dim)) throw std::domain_error("hessian: non-finite gradient argument");
    Mat3 out{};
    const double t = norm(p);
    if (t == 0.0) {
        for (int d = 0; d < dim; ++d) out[d][d] = 1.0;
        return out;
    }
    const double tangential = m.h1(t) / t;
    const double radial_excess = m.h2(t) - tangential;
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j)
            out[i][j] = radial_excess * p[i] * p[j] / (t * t) + (i == j ? tangential : 0.0);
    }
    return out;
}

// Worst-case discrepancies of the structural assumptions over a quasi-random
// probe set in the ball |p| <= M. Violations are collected, not thrown.
struct StructureReport {
    double lambda_estimate = 0.0;        // min Hessian eigenvalue over the probes
    double max_flux_remainder = 0.0;     // max |p - flux(p)| / |p|^2
    bool remainder_ok = true;            // max_flux_remainder <= remainder_constant
    double max_symmetry_error = 0.0;
    double max_flux_fd_error = 0.0;      // relative, vs central differences of f
    double max_hessian_fd_error = 0.0;   // relative, vs second differences of f
    double max_omega2_identity_error = 0.0;  // |h''-1 - (omega1 + t omega1')|
    double min_flux_monotonicity = 0.0;  // min (flux(p)-flux(q)).(p-q) over pairs
    std::vector<std::string> violations;
};

inline StructureReport verify_structure(const NonlinearityModel& m, double probe_radius,
                                        int sample_count, int dim = 2,
                                        std::uint64_t seed = 0x5eed) {
    if (probe_radius <= 0.0) throw std::invalid_argument("verify_structure: M must be > 0");
    if (sample_count < 1) throw std::invalid_argument("verify_structure: need k >= 1");

    detail::Rng rng(seed);
    std::vector<Vec3> probes;
    probes.reserve(std::size_t(sample_count) + 8);
    for (int i = 0; i < sample_count; ++i) probes.push_back(rng.in_ball(dim, probe_radius));
    // Deterministic probes on the sphere |p| = M: the eigenvalue floor of a
    // radial density with decreasing radial eigenvalue sits exactly there.
    for (int i = 0; i < 6; ++i) probes.push_back(scale(rng.direction(dim), probe_radius));
    {
        Vec3 axis{0, 0, 0};
        axis[0] = probe_radius;
        probes.push_back(axis);
    }

    StructureReport rep;
    rep.lambda_estimate = std::numeric_limits<double>::infinity();
    rep.min_flux_monotonicity = std::numeric_limits<double>::infinity();
    const double fd_step = 1e-5;

    auto f_at = [&](Vec3 p) { return energy_density(m, p); };

    Vec3 prev{0, 0, 0};
    bool have_prev = false;
    for (const Vec3& p : probes) {
        const double t = norm(p);
        const Vec3 fl = flux(m, p);
        const Mat3 he = hessian(m, p, dim);

        // remainder bound |p - flux(p)| <= C |p|^2 within the validity radius
        if (t > 1e-12 && t <= m.t_bar) {
            const double ratio = norm(sub(p, fl)) / (t * t);
            rep.max_flux_remainder = std::max(rep.max_flux_remainder, ratio);
        }

        // symmetry and eigenvalue floor
        for (int i = 0; i < dim; ++i)
            for (int j = i + 1; j < dim; ++j)
                rep.max_symmetry_error = std::max(rep.max_symmetry_error, std::abs(he[i][j] - he[j][i]));
        const auto ev = detail::symmetric_eigenvalues(he, dim);
        rep.lambda_estimate = std::min(rep.lambda_estimate, ev[0]);
        if (ev[0] <= 0.0)
            rep.violations.push_back("non-positive Hessian eigenvalue at |p|=" + std::to_string(t));

        // flux vs central differences of f
        if (t >= 1e-3) {
            double worst = 0.0;
            for (int d = 0; d < dim; ++d) {
                Vec3 hi = p, lo = p;
                hi[d] += fd_step;
                lo[d] -= fd_step;
                const double fd = (f_at(hi) - f_at(lo)) / (2.0 * fd_step);
                worst = std::max(worst, std::abs(fd - fl[d]));
            }
            rep.max_flux_fd_error = std::max(rep.max_flux_fd_error, worst / std::max(norm(fl), 1e-8));
        }

        // Hessian vs second differences of f
        if (t >= 1e-2) {
            double worst = 0.0, scale_ref = 0.0;
            const double h2step = 1e-4;
            for (int i = 0; i < dim; ++i) {
                for (int j = 0; j < dim; ++j) {
                    Vec3 pp = p, pm = p, mp = p, mm = p;
                    pp[i] += h2step; pp[j] += h2step;
                    pm[i] += h2step; pm[j] -= h2step;
                    mp[i] -= h2step; mp[j] += h2step;
                    mm[i] -= h2step; mm[j] -= h2step;
                    const double fd = (f_at(pp) - f_at(pm) - f_at(mp) + f_at(mm)) / (4.0 * h2step * h2step);
                    worst = std::max(worst, std::abs(fd - he[i][j]));
                    scale_ref = std::max(scale_ref, std::abs(he[i][j]));
                }
            }
            rep.max_hessian_fd_error = std::max(rep.max_hessian_fd_error, worst / std::max(scale_ref, 1e-8));
        }

        // omega2 = omega1 + t omega1' with omega1' by central differences
        if (t >= 1e-3 && t < m.t_bar) {
            const double dw = 1e-6 * std::max(t, 1.0);
            const double w1p = (omega1(m, t + dw) - omega1(m, t - dw)) / (2.0 * dw);
            const double omega2 = m.h2(t) - 1.0;
            rep.max_omega2_identity_error =
                std::max(rep.max_omega2_identity_error, std::abs(omega2 - (omega1(m, t) + t * w1p)));
        }

        // monotonicity of the flux map (convexity of f)
        if (have_prev) {
            const Vec3 d = sub(p, prev);
            const double mono = dot(sub(fl, flux(m, prev)), d);
            rep.min_flux_monotonicity = std::min(rep.min_flux_monotonicity, mono);
            if (mono < -1e-12)
                rep.violations.push_back("flux monotonicity violated, inner product " + std::to_string(mono));
        }
        prev = p;
        have_prev = true;
    }

    rep.remainder_ok = rep.max_flux_remainder <= m.remainder_constant + 1e-12;
    if (!rep.remainder_ok)
        rep.violations.push_back("flux remainder ratio " + std::to_string(rep.max_flux_remainder) +
                                 " exceeds bound " + std::to_string(m.remainder_constant));
    return rep;
}

// ---------------------------------------------------------------------------
// Built-in models

inline NonlinearityModel make_quadratic() {
    NonlinearityModel m;
    m.name = "quadratic";
    m.h = [](double t) { return 0.5 * t * t; };
    m.h1 = [](double t) { return t; };
    m.h2 = [](double) { return 1.0; };
    m.t_bar = 1.0;
    m.remainder_constant = 1e-15;  // omega1 vanishes identically
    return m;
}

inline NonlinearityModel make_minimal_surface() {
    NonlinearityModel m;
    m.name = "minimal_surface";
    m.h = [](double t) { return std::sqrt(1.0 + t * t) - 1.0; };
    m.h1 = [](double t) { return t / std::sqrt(1.0 + t * t); };
    m.h2 = [](double t) { return std::pow(1.0 + t * t, -1.5); };
    m.t_bar = 1.0;
    // |omega1(t)| = 1 - (1+t^2)^{-1/2} <= t^2/2 <= t/2 and
    // |h''(t) - 1| = 1 - (1+t^2)^{-3/2} <= (3/2) t^2 <= (3/2) t on (0, 1].
    m.remainder_constant = 1.5;
    return m;
}

namespace detail {

// C-infinity cutoff: 1 on [0, 0.3], 0 on [1, inf), the classical
// exp(-1/s)-based transition in between. Smoothness everywhere keeps the
// finite-difference cross-checks of flux/Hessian second-order accurate, and
// the transition band is wide enough that h = t^2/2 + c t^3 chi stays
// uniformly convex for the admissible coefficient range.
inline constexpr double kCutoffStart = 0.3;
inline constexpr double kCutoffWidth = 0.7;

inline double bump(double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; }
inline double bump_d1(double s) { return s > 0.0 ? bump(s) / (s * s) : 0.0; }
inline double bump_d2(double s) {
    return s > 0.0 ? bump(s) * (1.0 / (s * s * s * s) - 2.0 / (s * s * s)) : 0.0;
}

inline double cutoff(double t) {
    if (t <= kCutoffStart) return 1.0;
    if (t >= 1.0) return 0.0;
    const double s = (t - kCutoffStart) / kCutoffWidth;
    return bump(1.0 - s) / (bump(s) + bump(1.0 - s));
}

inline double cutoff_d1(double t) {
    if (t <= kCutoffStart || t >= 1.0) return 0.0;
    const double s = (t - kCutoffStart) / kCutoffWidth;
    const double d = bump(s) + bump(1.0 - s);
    const double p = bump_d1(s) * bump(1.0 - s) + bump(s) * bump_d1(1.0 - s);
    return -p / (d * d) / kCutoffWidth;
}

inline double cutoff_d2(double t) {
    if (t <= kCutoffStart || t >= 1.0) return 0.0;
    const double s = (t - kCutoffStart) / kCutoffWidth;
    const double d = bump(s) + bump(1.0 - s);
    const double dp = bump_d1(s) - bump_d1(1.0 - s);
    const double p = bump_d1(s) * bump(1.0 - s) + bump(s) * bump_d1(1.0 - s);
    const double pp = bump_d2(s) * bump(1.0 - s) - bump(s) * bump_d2(1.0 - s);
    return -(pp * d - 2.0 * p * dp) / (d * d * d) / (kCutoffWidth * kCutoffWidth);
}

}  // namespace detail

// h(t) = t^2/2 + c t^3 chi(t): a genuine O(t) remainder in h'' near zero
// (h'' = 1 + 6ct for t <= 0.3) while staying exactly quadratic for t >= 1.
inline NonlinearityModel make_perturbed_quadratic(double c = 0.1) {
    if (!std::isfinite(c) || std::abs(c) > 0.12)
        throw std::invalid_argument("perturbed_quadratic: |c| must be <= 0.12 to keep h convex");
    NonlinearityModel m;
    m.name = "perturbed_quadratic";
    m.h = [c](double t) { return 0.5 * t * t + c * t * t * t * detail::cutoff(t); };
    m.h1 = [c](double t) {
        return t + c * (3.0 * t * t * detail::cutoff(t) + t * t * t * detail::cutoff_d1(t));
    };
    m.h2 = [c](double t) {
        return 1.0 + c * (6.0 * t * detail::cutoff(t) + 6.0 * t * t * detail::cutoff_d1(t) +
                          t * t * t * detail::cutoff_d2(t));
    };
    m.t_bar = 1.0;
    // Remainder constant: max over (0, t_bar] of |omega1|/t and |omega2|/t,
    // evaluated on a dense deterministic grid (exactly 6|c| below the cutoff).
    double cmax = 6.0 * std::abs(c);
    for (int i = 1; i <= 4000; ++i) {
        const double t = m.t_bar * double(i) / 4000.0;
        const double w1 = m.h1(t) / t - 1.0;
        const double w2 = m.h2(t) - 1.0;
        cmax = std::max({cmax, std::abs(w1) / t, std::abs(w2) / t});
        if (m.h2(t) <= 0.0)
            throw std::invalid_argument("perturbed_quadratic: h'' not positive at t=" + std::to_string(t));
    }
    m.remainder_constant = cmax;
    return m;
}

// Model lookup used by the run configuration ("nonlinearity": {"name": ...}).
inline NonlinearityModel make_model(const std::string& name, double c = 0.1) {
    if (name == "quadratic") return make_quadratic();
    if (name == "minimal_surface") return make_minimal_surface();
    if (name == "perturbed_quadratic") return make_perturbed_quadratic(c);
    throw std::invalid_argument("unknown nonlinearity model: " + name);
}

// Minimum Hessian eigenvalue over |p| <= M for a radial density: the
// eigenvalues are h''(t) radially and h'(t)/t tangentially, so a dense scan
// in t suffices. Used by the solver to monitor ellipticity on the iterates'
// gradient range.
inline double radial_eigenvalue_floor(const NonlinearityModel& m, double M, int samples = 2048) {
    double lo = 1.0;  // t -> 0 limit of both eigenvalue branches
    for (int i = 1; i <= samples; ++i) {
        const double t = M * double(i) / double(samples);
        lo = std::min({lo, m.h2(t), m.h1(t) / t});
    }
    return lo;
}

}  // namespace thob
