#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "thob/detail/linalg.hpp"
#include "thob/grid.hpp"

namespace thob {

namespace detail {

struct Rule1D {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_m.
inline Rule1D gauss_legendre(int m) {
    if (m < 1) throw std::invalid_argument("gauss_legendre: need m >= 1");
    Rule1D r;
    r.nodes.resize(std::size_t(m));
    r.weights.resize(std::size_t(m));
    for (int i = 0; i < m; ++i) {
        double x = std::cos(std::numbers::pi * (double(i) + 0.75) / (double(m) + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= m; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / double(k);
                p0 = p1;
                p1 = p2;
            }
            dp = double(m) * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        r.nodes[std::size_t(m - 1 - i)] = x;
        r.weights[std::size_t(m - 1 - i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

inline Rule1D gauss_legendre(int m, double a, double b) {
    Rule1D r = gauss_legendre(m);
    for (int i = 0; i < m; ++i) {
        r.nodes[std::size_t(i)] = 0.5 * (a + b) + 0.5 * (b - a) * r.nodes[std::size_t(i)];
        r.weights[std::size_t(i)] *= 0.5 * (b - a);
    }
    return r;
}

}  // namespace detail

// Quadrature on the half-sphere (dB_rho)^+ and half-ball B_rho^+ around a
// point of the thin plane. Surface weights sum to the half-sphere area,
// volume weights to the half-ball volume. Tensor Gauss-Legendre in angular
// coordinates; the dim-3 polar angle is handled through its cosine so even
// monomials integrate exactly.
struct HemisphereQuadrature {
    int dim = 2;
    Vec3 center{0, 0, 0};
    double radius = 0.0;
    int angular_order = 32;
    int radial_order = 16;
    std::vector<Vec3> surface_nodes;
    std::vector<double> surface_weights;
    std::vector<Vec3> volume_nodes;
    std::vector<double> volume_weights;
};

inline HemisphereQuadrature make_hemisphere_quadrature(int dim, const Vec3& center, double radius,
                                                       int angular = 32, int radial = 16) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("quadrature: dim must be 2 or 3");
    if (radius <= 0.0) throw std::invalid_argument("quadrature: radius must be positive");
    if (angular < 2 || radial < 1) throw std::invalid_argument("quadrature: rule order too small");

    HemisphereQuadrature q;
    q.dim = dim;
    q.center = center;
    q.radius = radius;
    q.angular_order = angular;
    q.radial_order = radial;

    // Unit-sphere angular nodes (upper half x_n >= 0) with weights summing to
    // the half-sphere measure of the unit sphere.
    std::vector<Vec3> ang_nodes;
    std::vector<double> ang_weights;
    if (dim == 2) {
        const auto th = detail::gauss_legendre(angular, 0.0, std::numbers::pi);
        for (int i = 0; i < angular; ++i) {
            ang_nodes.push_back({std::cos(th.nodes[std::size_t(i)]), std::sin(th.nodes[std::size_t(i)]), 0.0});
            ang_weights.push_back(th.weights[std::size_t(i)]);
        }
    } else {
        const auto th = detail::gauss_legendre(angular, 0.0, 2.0 * std::numbers::pi);
        const auto cs = detail::gauss_legendre(angular, 0.0, 1.0);  // cos of polar angle
        for (int i = 0; i < angular; ++i) {
            for (int j = 0; j < angular; ++j) {
                const double c = cs.nodes[std::size_t(j)];
                const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
                ang_nodes.push_back({s * std::cos(th.nodes[std::size_t(i)]),
                                     s * std::sin(th.nodes[std::size_t(i)]), c});
                ang_weights.push_back(th.weights[std::size_t(i)] * cs.weights[std::size_t(j)]);
            }
        }
    }

    for (std::size_t i = 0; i < ang_nodes.size(); ++i) {
        Vec3 x = add(center, scale(ang_nodes[i], radius));
        q.surface_nodes.push_back(x);
        q.surface_weights.push_back(ang_weights[i] * std::pow(radius, dim - 1));
    }

    const auto rad = detail::gauss_legendre(radial, 0.0, radius);
    for (int k = 0; k < radial; ++k) {
        const double r = rad.nodes[std::size_t(k)];
        const double wr = rad.weights[std::size_t(k)] * std::pow(r, dim - 1);
        for (std::size_t i = 0; i < ang_nodes.size(); ++i) {
            q.volume_nodes.push_back(add(center, scale(ang_nodes[i], r)));
            q.volume_weights.push_back(wr * ang_weights[i]);
        }
    }
    return q;
}

template <class F>
double surface_integral(const HemisphereQuadrature& q, F&& integrand) {
    std::vector<double> terms(q.surface_nodes.size());
    for (std::size_t i = 0; i < q.surface_nodes.size(); ++i)
        terms[i] = q.surface_weights[i] * integrand(q.surface_nodes[i]);
    return pairwise_sum(terms);
}

template <class F>
double volume_integral(const HemisphereQuadrature& q, F&& integrand) {
    std::vector<double> terms(q.volume_nodes.size());
    for (std::size_t i = 0; i < q.volume_nodes.size(); ++i)
        terms[i] = q.volume_weights[i] * integrand(q.volume_nodes[i]);
    return pairwise_sum(terms);
}

}  // namespace thob
