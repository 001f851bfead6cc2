#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace thob {

// Small fixed-capacity vector/matrix types. The spatial dimension is 2 or 3
// at runtime; unused trailing components are kept at zero so norms and dot
// products are dimension-agnostic.
using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 sub(const Vec3& a, const Vec3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

inline Vec3 add(const Vec3& a, const Vec3& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

inline Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

inline bool all_finite(const Vec3& a, int dim) {
    for (int d = 0; d < dim; ++d)
        if (!std::isfinite(a[d])) return false;
    return true;
}

// Pairwise (cascade) summation: deterministic regardless of how the terms
// were produced, and more accurate than a running sum for long lists.
inline double pairwise_sum(std::span<const double> terms) {
    const std::size_t n = terms.size();
    if (n <= 32) {
        double s = 0.0;
        for (double t : terms) s += t;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(terms.first(half)) + pairwise_sum(terms.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& terms) {
    return pairwise_sum(std::span<const double>(terms));
}

namespace detail {

// Eigenvalues of a symmetric dim x dim matrix (dim <= 3) by cyclic Jacobi
// rotations. Returns eigenvalues sorted ascending.
inline std::array<double, 3> symmetric_eigenvalues(Mat3 a, int dim) {
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < dim; ++p)
            for (int q = p + 1; q < dim; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (int p = 0; p < dim; ++p) {
            for (int q = p + 1; q < dim; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < dim; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < dim; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::array<double, 3> ev{a[0][0], dim > 1 ? a[1][1] : 0.0, dim > 2 ? a[2][2] : 0.0};
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j)
            if (ev[j] < ev[i]) std::swap(ev[i], ev[j]);
    return ev;
}

// Dense linear solve with partial pivoting; used for the small systems in
// the brute-force oracle. Throws on (numerically) singular input.
inline std::vector<double> lu_solve(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    if (a.size() != n * n) throw std::invalid_argument("lu_solve: shape mismatch");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::abs(a[perm[k] * n + k]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(a[perm[i] * n + k]);
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best < 1e-300) throw std::runtime_error("lu_solve: singular matrix");
        std::swap(perm[k], perm[piv]);
        const double akk = a[perm[k] * n + k];
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a[perm[i] * n + k] / akk;
            a[perm[i] * n + k] = f;
            for (std::size_t j = k + 1; j < n; ++j) a[perm[i] * n + j] -= f * a[perm[k] * n + j];
            b[perm[i]] -= f * b[perm[k]];
        }
    }
    std::vector<double> x(n);
    for (std::size_t ir = n; ir-- > 0;) {
        double s = b[perm[ir]];
        for (std::size_t j = ir + 1; j < n; ++j) s -= a[perm[ir] * n + j] * x[j];
        x[ir] = s / a[perm[ir] * n + ir];
    }
    return x;
}

struct CgResult {
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
    bool negative_curvature = false;
};

// Preconditioned conjugate gradients with a user-supplied operator. `mask`
// selects the active coordinates; everything else is held at zero.
template <class ApplyOp>
CgResult pcg(ApplyOp&& apply, const std::vector<double>& b, std::vector<double>& x,
             const std::vector<double>& diag, const std::vector<char>& mask, double rel_tol,
             int max_iter) {
    const std::size_t n = b.size();
    std::vector<double> r(n, 0.0), z(n, 0.0), p(n, 0.0), ap(n, 0.0);
    apply(x, ap);
    double bnorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        r[i] = b[i] - ap[i];
        bnorm2 += b[i] * b[i];
    }
    const double stop2 = rel_tol * rel_tol * std::max(bnorm2, 1e-300);
    CgResult res;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        z[i] = r[i] / (diag[i] > 1e-300 ? diag[i] : 1.0);
        p[i] = z[i];
        rz += r[i] * z[i];
    }
    for (int it = 0; it < max_iter; ++it) {
        double rr = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i]) rr += r[i] * r[i];
        res.residual = std::sqrt(rr);
        if (rr <= stop2) {
            res.converged = true;
            res.iterations = it;
            return res;
        }
        apply(p, ap);
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i]) pap += p[i] * ap[i];
        if (pap <= 0.0) {
            res.negative_curvature = true;
            res.iterations = it;
            return res;
        }
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            z[i] = r[i] / (diag[i] > 1e-300 ? diag[i] : 1.0);
            rz_new += r[i] * z[i];
        }
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i]) p[i] = z[i] + beta * p[i];
        res.iterations = it + 1;
    }
    return res;
}

// Least-squares line fit y = slope * x + intercept; returns RMS residual.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double rms_residual = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("fit_line: need >= 2 samples");
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / double(n), my = sy / double(n);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx < 1e-300) throw std::invalid_argument("fit_line: degenerate abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - (f.slope * x[i] + f.intercept);
        rss += e * e;
    }
    f.rms_residual = std::sqrt(rss / double(n));
    return f;
}

}  // namespace detail
}  // namespace thob
