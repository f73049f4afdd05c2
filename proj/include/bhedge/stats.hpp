#pragma once

#include <cmath>
#include <cstddef>
#include <limits>

namespace bhedge {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    double sd = 0.0;
    std::size_t n = 0;

    // mean/se with the convention 0/0 = 0
    double z() const {
        if (se > 0.0) return mean / se;
        return mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    }
    double z_against(double target) const {
        const double d = mean - target;
        if (se > 0.0) return d / se;
        return d == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), d);
    }
};

// Shifted accumulation: a constant sample gives its value and zero spread exactly.
template <class Get>
MeanSe mean_se(std::size_t n, Get get) {
    MeanSe out;
    out.n = n;
    if (n == 0) return out;
    const double shift = get(std::size_t{0});
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = get(i) - shift;
        s += d;
        s2 += d * d;
    }
    const double nn = static_cast<double>(n);
    out.mean = shift + s / nn;
    if (n > 1) {
        const double var = std::max(0.0, (s2 - s * s / nn) / (nn - 1.0));
        out.sd = std::sqrt(var);
        out.se = out.sd / std::sqrt(nn);
    }
    return out;
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace bhedge
