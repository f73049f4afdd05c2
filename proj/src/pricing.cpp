#include "bhedge/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "bhedge/linalg2.hpp"
#include "bhedge/stats.hpp"

namespace bhedge {

double Claim::payoff(double /*sh0*/, double sh1) const {
    switch (form) {
    case Form::identity_s1hat: return sh1;
    case Form::constant: return value;
    case Form::call_on_s1hat: return std::max(sh1 - strike, 0.0);
    }
    return 0.0;
}

double Claim::conditional(double forward, double var) const {
    switch (form) {
    case Form::identity_s1hat: return forward;
    case Form::constant: return value;
    case Form::call_on_s1hat: {
        if (!(forward > 0.0)) return 0.0;
        if (!(var > 0.0)) return std::max(forward - strike, 0.0);
        const double sd = std::sqrt(var);
        const double d1 = (std::log(forward / strike) + 0.5 * var) / sd;
        return forward * norm_cdf(d1) - strike * norm_cdf(d1 - sd);
    }
    }
    return 0.0;
}

const char* claim_name(Claim::Form f) {
    switch (f) {
    case Claim::Form::identity_s1hat: return "identity-s1hat";
    case Claim::Form::constant: return "constant";
    case Claim::Form::call_on_s1hat: return "call-on-s1hat";
    }
    return "identity-s1hat";
}

namespace {

double pow2_step(double c, double rel) {
    const double raw = rel * std::max(std::abs(c), 1.0);
    return std::ldexp(1.0, static_cast<int>(std::lround(std::log2(raw))));
}

double& coord(StatePoint& p, int a) {
    switch (a) {
    case 0: return p.t;
    case 1: return p.x;
    case 2: return p.s1;
    case 3: return p.sh0;
    case 4: return p.sh1;
    default: return p.s0;
    }
}

double coord(const StatePoint& p, int a) { return coord(const_cast<StatePoint&>(p), a); }

} // namespace

Jet CallablePrice::jet(const StatePoint& p, bool second) const {
    // axes 0..4 as in SurfaceAxes, 5 = s0
    Jet j;
    j.v = f_(p);
    std::array<double, 6> d1{};
    for (int a = 0; a < 6; ++a) {
        const double h = pow2_step(coord(p, a), rel_step_);
        StatePoint up = p, dn = p;
        coord(up, a) += h;
        coord(dn, a) -= h;
        d1[static_cast<std::size_t>(a)] = (f_(up) - f_(dn)) / (coord(up, a) - coord(dn, a));
    }
    j.t = d1[0];
    j.x = d1[1];
    j.s1 = d1[2];
    j.h0 = d1[3];
    j.h1 = d1[4];
    j.s0 = d1[5];
    if (!second) return j;

    const double rel2 = rel_step_ * 10.0;
    auto diag = [&](int a) {
        const double h = pow2_step(coord(p, a), rel2);
        StatePoint up = p, dn = p;
        coord(up, a) += h;
        coord(dn, a) -= h;
        return ((f_(up) - j.v) - (j.v - f_(dn))) / (h * h);
    };
    auto mixed = [&](int a, int b) {
        const double ha = pow2_step(coord(p, a), rel2), hb = pow2_step(coord(p, b), rel2);
        auto at = [&](double sa, double sb) {
            StatePoint q = p;
            coord(q, a) += sa * ha;
            coord(q, b) += sb * hb;
            return f_(q);
        };
        return ((at(1, 1) - at(1, -1)) - (at(-1, 1) - at(-1, -1))) / (4.0 * ha * hb);
    };
    j.xx = diag(1);
    j.s1s1 = diag(2);
    j.h0h0 = diag(3);
    j.h1h1 = diag(4);
    j.xs1 = mixed(1, 2);
    j.xh0 = mixed(1, 3);
    j.xh1 = mixed(1, 4);
    j.s1h0 = mixed(2, 3);
    j.s1h1 = mixed(2, 4);
    j.h0h1 = mixed(3, 4);
    return j;
}

const std::vector<double>& SurfaceAxes::operator[](int a) const {
    switch (a) {
    case 0: return t;
    case 1: return x;
    case 2: return s1;
    case 3: return sh0;
    default: return sh1;
    }
}

std::vector<double>& SurfaceAxes::operator[](int a) {
    return const_cast<std::vector<double>&>(static_cast<const SurfaceAxes&>(*this)[a]);
}

PriceSurface::PriceSurface(SurfaceAxes axes, std::vector<double> g, std::vector<double> se, int n_paths,
                           std::uint64_t seed, std::string estimator)
    : axes_(std::move(axes)), g_(std::move(g)), se_(std::move(se)), n_paths_(n_paths), seed_(seed),
      estimator_(std::move(estimator)) {
    std::size_t total = 1;
    for (int a = 4; a >= 0; --a) {
        const auto& ax = axes_[a];
        if (ax.empty()) throw std::invalid_argument(fmt::format("surface axis {} is empty", a));
        for (std::size_t i = 1; i < ax.size(); ++i)
            if (!(ax[i] > ax[i - 1])) throw std::invalid_argument(fmt::format("surface axis {} not increasing", a));
        stride_[static_cast<std::size_t>(a)] = total;
        total *= ax.size();
    }
    if (g_.size() != total) throw std::invalid_argument("surface values do not match the axes");
    if (se_.empty()) se_.assign(total, 0.0);
    build_derivatives();
}

std::size_t PriceSurface::index(std::size_t it, std::size_t ix, std::size_t is, std::size_t i0, std::size_t i1) const {
    return it * stride_[0] + ix * stride_[1] + is * stride_[2] + i0 * stride_[3] + i1 * stride_[4];
}

StatePoint PriceSurface::node_point(std::size_t flat) const {
    StatePoint p;
    for (int a = 0; a < 5; ++a) {
        const auto& ax = axes_[a];
        coord(p, a) = ax[(flat / stride_[static_cast<std::size_t>(a)]) % ax.size()];
    }
    return p;
}

void PriceSurface::build_derivatives() {
    for (int a = 0; a < 5; ++a) {
        const auto& ax = axes_[a];
        auto& d = d_[static_cast<std::size_t>(a)];
        d.clear();
        const std::size_t n = ax.size();
        if (n < 2) continue;
        d.resize(g_.size());
        const std::size_t st = stride_[static_cast<std::size_t>(a)];
        for (std::size_t f = 0; f < g_.size(); ++f) {
            const std::size_t i = (f / st) % n;
            if (i == 0) {
                d[f] = (g_[f + st] - g_[f]) / (ax[1] - ax[0]);
            } else if (i == n - 1) {
                d[f] = (g_[f] - g_[f - st]) / (ax[n - 1] - ax[n - 2]);
            } else {
                const double hl = ax[i] - ax[i - 1], hr = ax[i + 1] - ax[i];
                d[f] = (hl * hl * g_[f + st] - hr * hr * g_[f - st] + (hr * hr - hl * hl) * g_[f]) /
                       (hl * hr * (hl + hr));
            }
        }
    }
}

bool PriceSurface::contains(const StatePoint& p) const {
    for (int a = 0; a < 5; ++a) {
        const auto& ax = axes_[a];
        if (ax.size() < 2) continue;
        const double tol = 1e-9 * (ax.back() - ax.front());
        const double c = coord(p, a);
        if (!(c >= ax.front() - tol && c <= ax.back() + tol)) return false;
    }
    return true;
}

double PriceSurface::interp(const std::vector<double>& field, const StatePoint& p) const {
    std::array<std::size_t, 5> lo{};
    std::array<double, 5> w{};
    std::array<int, 5> active{};
    int n_active = 0;
    std::size_t base = 0;
    static const char* names[] = {"t", "x", "s1", "s0hat", "s1hat"};
    for (int a = 0; a < 5; ++a) {
        const auto& ax = axes_[a];
        const auto au = static_cast<std::size_t>(a);
        if (ax.size() < 2) continue;
        const double c = coord(p, a);
        const double tol = 1e-9 * (ax.back() - ax.front());
        if (!(c >= ax.front() - tol && c <= ax.back() + tol))
            throw ExtrapolationError(
                fmt::format("{} = {} outside surface range [{}, {}]", names[a], c, ax.front(), ax.back()));
        auto it = std::upper_bound(ax.begin(), ax.end(), c);
        std::size_t i = it == ax.begin() ? 0 : static_cast<std::size_t>(it - ax.begin()) - 1;
        i = std::min(i, ax.size() - 2);
        lo[au] = i;
        w[au] = std::clamp((c - ax[i]) / (ax[i + 1] - ax[i]), 0.0, 1.0);
        base += i * stride_[au];
        active[static_cast<std::size_t>(n_active++)] = a;
    }
    // values are cubic Hermite along s1hat (node slopes from d_), multilinear elsewhere
    const bool hermite = &field == &g_ && n_active > 0 && active[static_cast<std::size_t>(n_active - 1)] == 4 &&
                         axes_.sh1.size() > 2;
    const int n_lin = hermite ? n_active - 1 : n_active;
    double h00 = 0.0, h10 = 0.0, h01 = 0.0, h11 = 0.0;
    if (hermite) {
        const double u = w[4], len = axes_.sh1[lo[4] + 1] - axes_.sh1[lo[4]];
        h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        h10 = u * (1.0 - u) * (1.0 - u) * len;
        h01 = u * u * (3.0 - 2.0 * u);
        h11 = -u * u * (1.0 - u) * len;
    }
    const auto& slope = d_[4];
    const std::size_t st4 = stride_[4];
    double acc = 0.0;
    for (int mask = 0; mask < (1 << n_lin); ++mask) {
        double wt = 1.0;
        std::size_t f = base;
        for (int j = 0; j < n_lin; ++j) {
            const auto a = static_cast<std::size_t>(active[static_cast<std::size_t>(j)]);
            if (mask & (1 << j)) {
                wt *= w[a];
                f += stride_[a];
            } else {
                wt *= 1.0 - w[a];
            }
        }
        if (wt == 0.0) continue;
        if (hermite)
            acc += wt * (h00 * field[f] + h10 * slope[f] + h01 * field[f + st4] + h11 * slope[f + st4]);
        else
            acc += wt * field[f];
    }
    return acc;
}

double PriceSurface::value(const StatePoint& p) const { return interp(g_, p); }

Jet PriceSurface::jet(const StatePoint& p, bool second) const {
    Jet j;
    j.v = interp(g_, p);
    auto first = [&](int a) { return d_[static_cast<std::size_t>(a)].empty() ? 0.0 : interp(d_[static_cast<std::size_t>(a)], p); };
    j.t = first(0);
    j.x = first(1);
    j.s1 = first(2);
    j.h0 = first(3);
    j.h1 = first(4);
    if (!second) return j;

    // derivative of the node-partial field d_a along axis b, one cell wide
    auto cross = [&](int a, int b) {
        const auto& da = d_[static_cast<std::size_t>(a)];
        const auto& ax = axes_[b];
        if (da.empty() || ax.size() < 2) return 0.0;
        const double c = coord(p, b);
        auto it = std::upper_bound(ax.begin(), ax.end(), c);
        std::size_t i = it == ax.begin() ? 0 : static_cast<std::size_t>(it - ax.begin()) - 1;
        i = std::min(i, ax.size() - 2);
        const double h = ax[i + 1] - ax[i];
        StatePoint up = p, dn = p;
        coord(up, b) = std::min(c + h, ax.back());
        coord(dn, b) = std::max(c - h, ax.front());
        return (interp(da, up) - interp(da, dn)) / (coord(up, b) - coord(dn, b));
    };
    j.xx = cross(1, 1);
    j.s1s1 = cross(2, 2);
    j.h0h0 = cross(3, 3);
    j.h1h1 = cross(4, 4);
    j.xs1 = cross(1, 2);
    j.xh0 = cross(1, 3);
    j.xh1 = cross(1, 4);
    j.s1h0 = cross(2, 3);
    j.s1h1 = cross(2, 4);
    j.h0h1 = cross(3, 4);
    return j;
}

bool conditional_applicable(const MarketModel& m, const Claim& c) {
    if (c.uses_s0hat()) return false;
    auto no_s1 = [](const Coefficient& k) { return !k.uses_s1(); };
    if (!no_s1(m.r) || !no_s1(m.b0) || !no_s1(m.sigma0) || !no_s1(m.b1) || !no_s1(m.sigma1)) return false;
    for (const auto& k : m.k0)
        if (!no_s1(k)) return false;
    for (const auto& k : m.k1)
        if (!no_s1(k)) return false;
    return m.rho == 0.0 || m.sigma0.is_zero();
}

namespace {

constexpr std::uint64_t kConditionalStream = 0xc0d1;

struct Samples {
    std::vector<double> z0, z1, var1;  // plain: Z factors; conditional: conditional means + log-variance
};

void restart_plain(const GopSpec& gop, const TimeGrid& grid, std::uint64_t node_seed, int k, double x0, double s10,
                   int n, Samples& out) {
    const MarketModel& m = gop.model();
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    const double rho_perp = std::sqrt(std::max(0.0, 1.0 - m.rho * m.rho));
    out.z0.resize(static_cast<std::size_t>(n));
    out.z1.resize(static_cast<std::size_t>(n));
    GopCache cache(gop);
    for (int p = 0; p < n; ++p) {
        double x = x0, log_s1 = std::log(s10), l0 = 0.0, l1 = 0.0;
        for (int i = k; i < grid.n_steps; ++i) {
            const double t = grid.t(i);
            StreamRng rng(node_seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(i));
            const StepNoise nz = draw_step_noise(rng, dt, m);
            const double dw = sq * nz.z_w;
            const double du = m.rho * dw + rho_perp * sq * nz.z_perp;
            const double s1 = std::exp(log_s1);
            const GopState& g = cache.at(t, x, s1);
            const double vol1 = g.sigma1 - g.theta1;
            double cpsi = 0.0, ckt = 0.0;
            for (int j = 0; j < g.n_marks; ++j) {
                cpsi += m.lambda(j) * g.psi[static_cast<std::size_t>(j)];
                ckt += m.lambda(j) * g.k_theta[static_cast<std::size_t>(j)];
            }
            l0 += (-0.5 * g.theta1 * g.theta1 + cpsi) * dt - g.theta1 * dw;
            l1 += (-0.5 * vol1 * vol1 - ckt) * dt + vol1 * dw;
            const double drift1 = m.b1(t, x, s1) - m.comp_s1(t, x, s1);
            log_s1 += (drift1 - 0.5 * g.sigma1 * g.sigma1) * dt + g.sigma1 * dw;
            x += (m.b0(t, x) - m.comp_x(t, x)) * dt + m.sigma0(t, x) * du;
            for (int j = 0; j < nz.n_jumps; ++j) {
                const int mk = nz.marks[static_cast<std::size_t>(j)];
                const auto mu = static_cast<std::size_t>(mk);
                const GopState& gj = cache.at(t, x, std::exp(log_s1));
                l0 += std::log1p(-gj.psi[mu]);
                l1 += std::log1p(gj.k_theta[mu]);
                x += m.k0[mu](t, x);
                log_s1 += std::log1p(gj.k1[mu]);
            }
        }
        out.z0[static_cast<std::size_t>(p)] = std::exp(l0);
        out.z1[static_cast<std::size_t>(p)] = std::exp(l1);
    }
}

void restart_conditional(const GopSpec& gop, const TimeGrid& grid, std::uint64_t node_seed, int k, double x0,
                         double s10, int n, Samples& out) {
    const MarketModel& m = gop.model();
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    const double lam = m.jumps.total_intensity();
    const bool x_diffuses = !m.sigma0.is_zero();
    out.z0.resize(static_cast<std::size_t>(n));
    out.z1.resize(static_cast<std::size_t>(n));
    out.var1.resize(static_cast<std::size_t>(n));
    GopCache cache(gop);
    for (int p = 0; p < n; ++p) {
        StreamRng rng(node_seed, static_cast<std::uint64_t>(p), kConditionalStream);
        double x = x0, a0 = 0.0, a1 = 0.0, v0 = 0.0, v1 = 0.0;
        double next_jump = lam > 0.0 ? grid.t(k) + rng.exponential(lam) : grid.T * 2.0 + 1.0;
        for (int i = k; i < grid.n_steps; ++i) {
            const double t = grid.t(i);
            const GopState& g = cache.at(t, x, s10);
            const double vol1 = g.sigma1 - g.theta1;
            double cpsi = 0.0, ckt = 0.0;
            for (int j = 0; j < g.n_marks; ++j) {
                cpsi += m.lambda(j) * g.psi[static_cast<std::size_t>(j)];
                ckt += m.lambda(j) * g.k_theta[static_cast<std::size_t>(j)];
            }
            a0 += (-0.5 * g.theta1 * g.theta1 + cpsi) * dt;
            v0 += g.theta1 * g.theta1 * dt;
            a1 += (-0.5 * vol1 * vol1 - ckt) * dt;
            v1 += vol1 * vol1 * dt;
            double xn = x + (m.b0(t, x) - m.comp_x(t, x)) * dt;
            if (x_diffuses) xn += m.sigma0(t, x) * sq * rng.normal();
            x = xn;
            const double t_end = grid.t(i + 1);
            while (next_jump <= t_end) {
                const double u = rng.uniform() * lam;
                double acc = 0.0;
                int mk = 0;
                for (; mk < m.n_marks() - 1; ++mk) {
                    acc += m.lambda(mk);
                    if (u < acc) break;
                }
                const auto mu = static_cast<std::size_t>(mk);
                const GopState& gj = cache.at(t, x, s10);
                a0 += std::log1p(-gj.psi[mu]);
                a1 += std::log1p(gj.k_theta[mu]);
                x += m.k0[mu](t, x);
                next_jump += rng.exponential(lam);
            }
        }
        out.z0[static_cast<std::size_t>(p)] = std::exp(a0 + 0.5 * v0);
        out.z1[static_cast<std::size_t>(p)] = std::exp(a1 + 0.5 * v1);
        out.var1[static_cast<std::size_t>(p)] = v1;
    }
}

struct NodeEstimate {
    double g = 0.0, se = 0.0;
};

// Control-variate mean of h over the samples; controls c0/c1 have mean zero.
class ControlVariates {
public:
    ControlVariates(const std::vector<double>& z0, const std::vector<double>& z1, bool enabled)
        : n_(z0.size()), enabled_(enabled) {
        if (!enabled_) return;
        const auto m0 = mean_se(n_, [&](std::size_t i) { return z0[i] - 1.0; });
        const auto m1 = mean_se(n_, [&](std::size_t i) { return z1[i] - 1.0; });
        mean0_ = m0.mean;
        mean1_ = m1.mean;
        c0_.resize(n_);
        c1_.resize(n_);
        double s00 = 0.0, s01 = 0.0, s11 = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            c0_[i] = (z0[i] - 1.0) - mean0_;
            c1_[i] = (z1[i] - 1.0) - mean1_;
            s00 += c0_[i] * c0_[i];
            s01 += c0_[i] * c1_[i];
            s11 += c1_[i] * c1_[i];
        }
        const double nn = static_cast<double>(n_);
        cov_ = {s00 / nn, s01 / nn, s11 / nn};
    }

    NodeEstimate estimate(const std::vector<double>& h) const {
        const double nn = static_cast<double>(n_);
        const double shift = h[0];
        double s = 0.0, s2 = 0.0, q0 = 0.0, q1 = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            const double d = h[i] - shift;
            s += d;
            s2 += d * d;
            if (enabled_) {
                q0 += d * c0_[i];
                q1 += d * c1_[i];
            }
        }
        const double mean = shift + s / nn;
        double var = std::max(0.0, s2 / nn - (s / nn) * (s / nn));
        if (!enabled_) return {mean, n_ > 1 ? std::sqrt(var / (nn - 1.0)) : 0.0};
        const Vec2 cov_h{q0 / nn, q1 / nn};
        const Vec2 beta = solve_sym2(cov_, cov_h).x;
        const double g = mean - (beta.v0 * mean0_ + beta.v1 * mean1_);
        var = std::max(0.0, var - 2.0 * dot(beta, cov_h) + dot(beta, mul(cov_, beta)));
        return {g, n_ > 1 ? std::sqrt(var / (nn - 1.0)) : 0.0};
    }

private:
    std::size_t n_;
    bool enabled_;
    double mean0_ = 0.0, mean1_ = 0.0;
    std::vector<double> c0_, c1_;
    Sym2 cov_;
};

} // namespace

PriceSurface estimate_price_function(const GopSpec& gop, const Claim& claim, const TimeGrid& grid,
                                     const SurfaceSpec& spec, Exec exec) {
    const MarketModel& m = gop.model();
    if (std::abs(claim.maturity - grid.T) > 1e-12 * std::max(1.0, grid.T))
        throw std::invalid_argument(fmt::format("claim maturity {} does not match horizon {}", claim.maturity, grid.T));
    if (spec.n_paths < 2) throw std::invalid_argument("surface needs at least 2 paths per node");
    SurfaceAxes axes = spec.axes;
    if (axes.x.empty()) axes.x = {m.x0};
    if (axes.s1.empty()) axes.s1 = {m.s1_0};
    if (axes.sh0.empty()) axes.sh0 = {1.0};
    if (axes.sh1.empty()) axes.sh1 = {m.s1_0};
    if (axes.t.empty()) throw std::invalid_argument("surface needs at least one time node");

    std::vector<int> steps;
    for (double t : axes.t) {
        const long k = std::lround(t / grid.dt());
        if (k < 0 || k > grid.n_steps || std::abs(k * grid.dt() - t) > 1e-9 * grid.T)
            throw std::invalid_argument(fmt::format("surface time {} is not a grid node", t));
        steps.push_back(static_cast<int>(k));
    }

    bool conditional = false;
    if (spec.estimator == Estimator::conditional) {
        if (!conditional_applicable(m, claim))
            throw std::invalid_argument("conditional estimator needs s1-free coefficients and X independent of W");
        conditional = true;
    } else if (spec.estimator == Estimator::automatic) {
        conditional = conditional_applicable(m, claim);
    }

    const std::size_t nt = axes.t.size(), nx = axes.x.size(), ns = axes.s1.size();
    const std::size_t n0 = axes.sh0.size(), n1 = axes.sh1.size();
    std::vector<double> g(nt * nx * ns * n0 * n1, 0.0), se(g.size(), 0.0);
    auto flat = [&](std::size_t it, std::size_t ix, std::size_t is, std::size_t i0, std::size_t i1) {
        return (((it * nx + ix) * ns + is) * n0 + i0) * n1 + i1;
    };

    const std::size_t n_base = nt * nx * ns;
    std::vector<std::string> errors(n_base);
    auto one_base = [&](std::size_t b) {
        const std::size_t it = b / (nx * ns), ix = (b / ns) % nx, is = b % ns;
        const int k = steps[it];
        if (k == grid.n_steps) {
            for (std::size_t i0 = 0; i0 < n0; ++i0)
                for (std::size_t i1 = 0; i1 < n1; ++i1) {
                    g[flat(it, ix, is, i0, i1)] = claim.payoff(axes.sh0[i0], axes.sh1[i1]);
                    se[flat(it, ix, is, i0, i1)] = 0.0;
                }
            return;
        }
        // common numbers across the state nodes of one time slice
        const std::uint64_t node_seed = mix_key(spec.seed, static_cast<std::uint64_t>(k));
        Samples smp;
        if (conditional)
            restart_conditional(gop, grid, node_seed, k, axes.x[ix], axes.s1[is], spec.n_paths, smp);
        else
            restart_plain(gop, grid, node_seed, k, axes.x[ix], axes.s1[is], spec.n_paths, smp);
        const ControlVariates cv(smp.z0, smp.z1, spec.control_variates);
        std::vector<double> h(static_cast<std::size_t>(spec.n_paths));
        for (std::size_t i0 = 0; i0 < n0; ++i0) {
            for (std::size_t i1 = 0; i1 < n1; ++i1) {
                if (i0 > 0 && !claim.uses_s0hat()) {
                    g[flat(it, ix, is, i0, i1)] = g[flat(it, ix, is, 0, i1)];
                    se[flat(it, ix, is, i0, i1)] = se[flat(it, ix, is, 0, i1)];
                    continue;
                }
                const double a0 = axes.sh0[i0], a1 = axes.sh1[i1];
                for (std::size_t p = 0; p < h.size(); ++p) {
                    const double v = conditional ? claim.conditional(a1 * smp.z1[p], smp.var1[p])
                                                 : claim.payoff(a0 * smp.z0[p], a1 * smp.z1[p]);
                    if (!std::isfinite(v))
                        throw ClaimIntegrabilityError(fmt::format("non-finite payoff sample at t={}", axes.t[it]));
                    h[p] = v;
                }
                const NodeEstimate e = cv.estimate(h);
                g[flat(it, ix, is, i0, i1)] = std::max(e.g, 0.0);
                se[flat(it, ix, is, i0, i1)] = e.se;
            }
        }
    };

    if (exec == Exec::serial) {
        for (std::size_t b = 0; b < n_base; ++b) one_base(b);
    } else {
        const auto nb = static_cast<long>(n_base);
#pragma omp parallel for schedule(dynamic)
        for (long b = 0; b < nb; ++b) {
            try {
                one_base(static_cast<std::size_t>(b));
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(b)] = e.what();
            }
        }
        for (const auto& e : errors)
            if (!e.empty()) throw ClaimIntegrabilityError(e);
    }
    return PriceSurface(std::move(axes), std::move(g), std::move(se), spec.n_paths, spec.seed,
                        conditional ? "conditional" : "plain");
}

StatePoint advance_state(const GopSpec& gop, GopCache& cache, const StatePoint& p, double dt, const StepDraw& d) {
    const MarketModel& m = gop.model();
    const double t = p.t, x = p.x;
    const GopState& g = cache.at(t, x, p.s1);
    double comp = 0.0;
    for (int k = 0; k < g.n_marks; ++k) comp += m.lambda(k) * g.psi[static_cast<std::size_t>(k)];
    const double r = m.r(t, x);
    double log_g = std::log(p.s0 / p.sh0) + (r + 0.5 * g.theta1 * g.theta1 - comp) * dt + g.theta1 * d.dw;
    double log_s1 = std::log(p.s1) + (m.b1(t, x, p.s1) - m.comp_s1(t, x, p.s1) - 0.5 * g.sigma1 * g.sigma1) * dt +
                    g.sigma1 * d.dw;
    StatePoint q;
    q.t = t + dt;
    q.x = x + (m.b0(t, x) - m.comp_x(t, x)) * dt + m.sigma0(t, x) * d.du;
    for (int j = 0; j < d.n_jumps; ++j) {
        const auto k = static_cast<std::size_t>(d.marks[static_cast<std::size_t>(j)]);
        const double s1_pre = std::exp(log_s1);
        log_g -= std::log1p(-cache.at(t, q.x, s1_pre).psi[k]);
        log_s1 += std::log1p(m.k1[k](t, q.x, s1_pre));
        q.x += m.k0[k](t, q.x);
    }
    q.s0 = p.s0 * std::exp(r * dt);
    q.s1 = std::exp(log_s1);
    const double num = std::exp(log_g);
    q.sh0 = q.s0 / num;
    q.sh1 = q.s1 / num;
    return q;
}

StatePoint jumped_point(const StatePoint& p, const MarketModel& m, const GopState& g, int k) {
    const auto ku = static_cast<std::size_t>(k);
    StatePoint q = p;
    q.x = p.x + m.k0[ku](p.t, p.x);
    q.s1 = p.s1 * (1.0 + g.k1[ku]);
    q.sh0 = p.sh0 * (1.0 - g.psi[ku]);
    q.sh1 = p.sh1 * (1.0 + g.k_theta[ku]);
    return q;
}

PartialSet price_partials(const PriceFunction& f, const StatePoint& p, const MarketModel& m, const GopState& g) {
    const Jet j = f.jet(p, false);
    PartialSet ps;
    ps.g = j.v;
    ps.dx = j.x;
    ps.ds1 = j.s1;
    ps.dsh0 = j.h0;
    ps.dsh1 = j.h1;
    ps.n_marks = g.n_marks;
    for (int k = 0; k < g.n_marks; ++k) ps.jump[static_cast<std::size_t>(k)] = f.value(jumped_point(p, m, g, k)) - j.v;
    return ps;
}

PartialSet price_partials(const PriceFunction& f, const StatePoint& p, const GopSpec& gop) {
    return price_partials(f, p, gop.model(), gop.at(p.t, p.x, p.s1));
}

double generator_apply(const GopSpec& gop, const PriceFunction& f, const StatePoint& p) {
    const MarketModel& m = gop.model();
    const GopState g = gop.at(p.t, p.x, p.s1);
    const Jet j = f.jet(p, true);
    const double th = g.theta1, s1v = g.sigma1, v1 = s1v - th;
    const double sig0 = m.sigma0(p.t, p.x);
    const double rs = m.rho * sig0;

    const double l1 = j.t + m.b0(p.t, p.x) * j.x + m.r(p.t, p.x) * p.s0 * j.s0 + m.b1(p.t, p.x, p.s1) * p.s1 * j.s1;
    const double l2 = 0.5 * sig0 * sig0 * j.xx + 0.5 * s1v * s1v * p.s1 * p.s1 * j.s1s1 +
                      0.5 * th * th * p.sh0 * p.sh0 * j.h0h0 + 0.5 * v1 * v1 * p.sh1 * p.sh1 * j.h1h1 +
                      rs * s1v * p.s1 * j.xs1 - rs * th * p.sh0 * j.xh0 + rs * v1 * p.sh1 * j.xh1 -
                      s1v * th * p.s1 * p.sh0 * j.s1h0 + s1v * v1 * p.s1 * p.sh1 * j.s1h1 -
                      th * v1 * p.sh0 * p.sh1 * j.h0h1;
    double lj = 0.0;
    for (int k = 0; k < g.n_marks; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const double jumped = f.value(jumped_point(p, m, g, k));
        lj += m.lambda(k) * ((jumped - j.v) - j.x * m.k0[ku](p.t, p.x) - j.s1 * p.s1 * g.k1[ku] +
                             j.h0 * p.sh0 * g.psi[ku] - j.h1 * p.sh1 * g.k_theta[ku]);
    }
    return l1 + l2 + lj;
}

std::vector<StatePoint> interior_nodes(const PriceSurface& s, double s0) {
    std::vector<StatePoint> out;
    const auto& ax = s.axes();
    for (std::size_t f = 0; f < s.size(); ++f) {
        StatePoint p = s.node_point(f);
        p.s0 = s0;
        if (p.t >= ax.t.back() && ax.t.size() > 1) continue;
        bool edge = false;
        for (int a = 1; a < 5; ++a) {
            const auto& v = ax[a];
            if (v.size() < 2) continue;
            const double c = a == 1 ? p.x : a == 2 ? p.s1 : a == 3 ? p.sh0 : p.sh1;
            edge = edge || c == v.front() || c == v.back();
        }
        if (!edge) out.push_back(p);
    }
    return out;
}

ResidualStats pde_residual(const PriceSurface& s, const GopSpec& gop, const std::vector<StatePoint>& points) {
    ResidualStats r;
    for (double v : s.values()) r.scale = std::max(r.scale, std::abs(v));
    double sq = 0.0;
    for (const auto& p : points) {
        double v = 0.0;
        try {
            v = generator_apply(gop, s, p);
        } catch (const ExtrapolationError&) {
            ++r.n_skipped;
            continue;
        }
        ++r.n_points;
        r.max_abs = std::max(r.max_abs, std::abs(v));
        sq += v * v;
    }
    if (r.n_points > 0) r.rms = std::sqrt(sq / r.n_points);
    if (r.scale > 0.0) {
        r.max_rel = r.max_abs / r.scale;
        r.rms_rel = r.rms / r.scale;
    }
    return r;
}

} // namespace bhedge
