#pragma once

#include <cstdint>
#include <cmath>

#include "thob/detail/linalg.hpp"

namespace thob::detail {

// SplitMix64: tiny, seedable, and portable across standard libraries, so
// probe sequences are bit-identical between runs and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform direction on the unit sphere of the given dimension.
    Vec3 direction(int dim) {
        while (true) {
            Vec3 v{0, 0, 0};
            double n2 = 0.0;
            for (int d = 0; d < dim; ++d) {
                v[d] = uniform(-1.0, 1.0);
                n2 += v[d] * v[d];
            }
            if (n2 > 1e-12 && n2 <= 1.0) {
                const double inv = 1.0 / std::sqrt(n2);
                for (int d = 0; d < dim; ++d) v[d] *= inv;
                return v;
            }
        }
    }

    // Uniform point in the closed ball of radius r.
    Vec3 in_ball(int dim, double r) {
        while (true) {
            Vec3 v{0, 0, 0};
            double n2 = 0.0;
            for (int d = 0; d < dim; ++d) {
                v[d] = uniform(-r, r);
                n2 += v[d] * v[d];
            }
            if (n2 <= r * r) return v;
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace thob::detail
