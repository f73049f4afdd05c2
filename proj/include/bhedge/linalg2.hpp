#pragma once

#include <algorithm>
#include <cmath>

namespace bhedge {

struct Sym2 {
    double a00 = 0.0, a01 = 0.0, a11 = 0.0;
};

struct Vec2 {
    double v0 = 0.0, v1 = 0.0;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.v0 * b.v0 + a.v1 * b.v1; }

inline Vec2 mul(const Sym2& a, const Vec2& x) {
    return {a.a00 * x.v0 + a.a01 * x.v1, a.a01 * x.v0 + a.a11 * x.v1};
}

struct Solve2 {
    Vec2 x;
    bool singular = false;
};

// Exact inverse when det > rel_tol * scale^2, Moore-Penrose otherwise.
inline Solve2 solve_sym2(const Sym2& a, const Vec2& h, double rel_tol = 1e-14) {
    const double scale = std::max({std::abs(a.a00), std::abs(a.a11), std::abs(a.a01)});
    const double det = a.a00 * a.a11 - a.a01 * a.a01;
    if (scale > 0.0 && det > rel_tol * scale * scale) {
        return {{(a.a11 * h.v0 - a.a01 * h.v1) / det, (a.a00 * h.v1 - a.a01 * h.v0) / det}, false};
    }
    if (!(scale > 0.0)) return {{0.0, 0.0}, true};
    // rank one: keep only the leading eigenpair
    const double half_tr = 0.5 * (a.a00 + a.a11);
    const double half_gap = 0.5 * (a.a00 - a.a11);
    const double lam = half_tr + std::sqrt(half_gap * half_gap + a.a01 * a.a01);
    Vec2 u{a.a01, lam - a.a00};
    Vec2 w{lam - a.a11, a.a01};
    Vec2 v = (dot(u, u) >= dot(w, w)) ? u : w;
    const double n2 = dot(v, v);
    if (!(lam > 0.0) || !(n2 > 0.0)) return {{0.0, 0.0}, true};
    const double c = dot(v, h) / (lam * n2);
    return {{c * v.v0, c * v.v1}, true};
}

} // namespace bhedge
