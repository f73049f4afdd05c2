#include "bhedge/numeraire.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace bhedge {

double gop_foc(const MarketModel& m, double pi, double t, double x, double s1) {
    const double sig = m.sigma1(t, x, s1);
    double f = pi * sig * sig;
    for (int k = 0; k < m.n_marks(); ++k) {
        const double kk = m.k1[static_cast<std::size_t>(k)](t, x, s1);
        f += m.lambda(k) * pi * kk * kk / (1.0 + pi * kk);
    }
    return f - (m.b1(t, x, s1) - m.r(t, x));
}

namespace {

double foc_slope(const MarketModel& m, double pi, double t, double x, double s1) {
    const double sig = m.sigma1(t, x, s1);
    double d = sig * sig;
    for (int k = 0; k < m.n_marks(); ++k) {
        const double kk = m.k1[static_cast<std::size_t>(k)](t, x, s1);
        const double q = 1.0 + pi * kk;
        d += m.lambda(k) * kk * kk / (q * q);
    }
    return d;
}

} // namespace

double solve_gop_fraction(const MarketModel& m, double t, double x, double s1) {
    const double premium = m.b1(t, x, s1) - m.r(t, x);
    if (premium == 0.0) return 0.0;

    const double sig = m.sigma1(t, x, s1);
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool any_jump = false;
    for (int k = 0; k < m.n_marks(); ++k) {
        const double kk = m.k1[static_cast<std::size_t>(k)](t, x, s1);
        if (kk > 0.0) lo = std::max(lo, -1.0 / kk);
        if (kk < 0.0) hi = std::min(hi, -1.0 / kk);
        any_jump = any_jump || kk != 0.0;
    }
    if (sig == 0.0 && !any_jump)
        throw NoRiskPremiumSupport(
            fmt::format("b1 - r = {} but sigma1 = 0 and no jumps at (t={}, x={}, s1={})", premium, t, x, s1));

    auto F = [&](double p) { return gop_foc(m, p, t, x, s1); };
    constexpr double eps = 1e-9;
    if (std::isfinite(lo)) lo += eps * std::max(1.0, std::abs(lo));
    if (std::isfinite(hi)) hi -= eps * std::max(1.0, std::abs(hi));

    // open side: F grows at least like pi*sigma1^2 or saturates; walk out until the sign flips
    if (!std::isfinite(lo)) {
        double step = 1.0;
        lo = std::min(0.0, std::isfinite(hi) ? hi : 0.0) - step;
        while (F(lo) > 0.0) {
            step *= 2.0;
            lo -= step;
            if (step > 1e300) throw NoRiskPremiumSupport(fmt::format("no GOP root below (premium {})", premium));
        }
    }
    if (!std::isfinite(hi)) {
        double step = 1.0;
        hi = std::max(0.0, lo) + step;
        while (F(hi) < 0.0) {
            step *= 2.0;
            hi += step;
            if (step > 1e300) throw NoRiskPremiumSupport(fmt::format("no GOP root above (premium {})", premium));
        }
    }
    if (F(lo) > 0.0 || F(hi) < 0.0)
        throw NoRiskPremiumSupport(fmt::format("GOP condition has no root in ({}, {})", lo, hi));

    double pi = std::clamp(0.0, lo, hi);
    for (int it = 0; it < 400; ++it) {
        const double f = F(pi);
        if (std::abs(f) <= 1e-12) {
            // one more Newton step is free accuracy when it stays in the bracket
            const double pn = pi - f / foc_slope(m, pi, t, x, s1);
            if (pn > lo && pn < hi && std::abs(F(pn)) <= std::abs(f)) pi = pn;
            break;
        }
        if (f < 0.0)
            lo = pi;
        else
            hi = pi;
        double pn = pi - f / foc_slope(m, pi, t, x, s1);
        if (!(pn > lo && pn < hi)) pn = 0.5 * (lo + hi);
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(pi))) {
            pi = pn;
            break;
        }
        pi = pn;
    }
    return pi;
}

MarketPriceOfRisk derive_market_price_of_risk(const MarketModel& m, double pi_star, double t, double x, double s1) {
    MarketPriceOfRisk out;
    out.theta1 = pi_star * m.sigma1(t, x, s1);
    out.psi.resize(static_cast<std::size_t>(m.n_marks()));
    for (int k = 0; k < m.n_marks(); ++k) {
        const double kk = m.k1[static_cast<std::size_t>(k)](t, x, s1);
        out.psi[static_cast<std::size_t>(k)] = pi_star * kk / (1.0 + pi_star * kk);
    }
    return out;
}

std::vector<double> k_theta(const MarketModel& m, const std::vector<double>& psi, double t, double x, double s1) {
    std::vector<double> out(psi.size());
    for (std::size_t k = 0; k < psi.size(); ++k) {
        const double kk = m.k1[k](t, x, s1);
        out[k] = kk - psi[k] - kk * psi[k];
    }
    return out;
}

double risk_premium_residual(const MarketModel& m, double theta1, const std::vector<double>& psi, double t, double x,
                             double s1) {
    double res = m.b1(t, x, s1) - m.r(t, x) - theta1 * m.sigma1(t, x, s1);
    for (int k = 0; k < m.n_marks(); ++k)
        res -= m.lambda(k) * m.k1[static_cast<std::size_t>(k)](t, x, s1) * psi[static_cast<std::size_t>(k)];
    return res;
}

GopSpec::GopSpec(MarketModel model, double theta1_shift) : model_(std::move(model)), shift_(theta1_shift) {
    check_measure(model_.jumps);
    auto note = [&](const Coefficient& c) {
        dep_t_ = dep_t_ || c.uses_t();
        dep_x_ = dep_x_ || c.uses_x();
        dep_s1_ = dep_s1_ || c.uses_s1();
    };
    note(model_.r);
    note(model_.b1);
    note(model_.sigma1);
    for (const auto& c : model_.k1) note(c);
    constant_ = !dep_t_ && !dep_x_ && !dep_s1_;
    if (constant_) const_state_ = compute(0.0, model_.x0, model_.s1_0);
}

GopState GopSpec::compute(double t, double x, double s1) const {
    GopState g;
    g.pi_star = solve_gop_fraction(model_, t, x, s1);
    g.sigma1 = model_.sigma1(t, x, s1);
    g.theta1 = g.pi_star * g.sigma1 + shift_;
    g.n_marks = model_.n_marks();
    for (int k = 0; k < g.n_marks; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const double kk = model_.k1[ku](t, x, s1);
        const double psi = g.pi_star * kk / (1.0 + g.pi_star * kk);
        g.k1[ku] = kk;
        g.psi[ku] = psi;
        g.k_theta[ku] = kk - psi - kk * psi;
    }
    return g;
}

GopState GopSpec::at(double t, double x, double s1) const {
    if (constant_) return const_state_;
    return compute(t, x, s1);
}

double GopSpec::psi_theta(int k, double t, double x, double s1) const {
    return at(t, x, s1).psi[static_cast<std::size_t>(k)];
}

double GopSpec::k_theta(int k, double t, double x, double s1) const {
    return at(t, x, s1).k_theta[static_cast<std::size_t>(k)];
}

const GopState& GopCache::at(double t, double x, double s1) {
    const bool dt = gop_->depends_on_t(), dx = gop_->depends_on_x(), ds = gop_->depends_on_s1();
    for (auto& s : slots_) {
        if (s.valid && (!dt || s.t == t) && (!dx || s.x == x) && (!ds || s.s1 == s1)) return s.st;
    }
    Slot& s = slots_[static_cast<std::size_t>(next_)];
    next_ = (next_ + 1) % static_cast<int>(slots_.size());
    s.valid = true;
    s.t = t;
    s.x = x;
    s.s1 = s1;
    s.st = gop_->at(t, x, s1);
    return s.st;
}

namespace {

void benchmark_one(PathBundle& b, const GopSpec& gop, int p) {
    const MarketModel& m = gop.model();
    const double dt = b.grid.dt();
    GopCache cache(gop);
    auto jumps = b.path_jumps(p);
    std::size_t jn = 0;
    double log_g = 0.0;
    b.gop[b.node(p, 0)] = 1.0;
    for (int i = 0; i < b.grid.n_steps; ++i) {
        const double t = b.grid.t(i);
        const std::size_t n0 = b.node(p, i);
        const GopState& g = cache.at(t, b.x[n0], b.s1[n0]);
        double comp = 0.0;
        for (int k = 0; k < g.n_marks; ++k) comp += m.lambda(k) * g.psi[static_cast<std::size_t>(k)];
        log_g += (m.r(t, b.x[n0]) + 0.5 * g.theta1 * g.theta1 - comp) * dt + g.theta1 * b.dw[b.inc(p, i)];
        for (; jn < jumps.size() && jumps[jn].step == i; ++jn) {
            const auto& e = jumps[jn];
            const double psi = cache.at(t, e.x_pre, e.s1_pre).psi[static_cast<std::size_t>(e.mark)];
            if (!(psi < 1.0))
                throw PositivityViolation(fmt::format("psi_theta = {} >= 1 on path {} step {}", psi, p, i));
            log_g -= std::log1p(-psi);
        }
        const double v = std::exp(log_g);
        if (!(v > 0.0) || !std::isfinite(v))
            throw PositivityViolation(fmt::format("numeraire value {} on path {} step {}", v, p, i + 1));
        b.gop[b.node(p, i + 1)] = v;
    }
    for (int i = 0; i <= b.grid.n_steps; ++i) {
        const std::size_t n0 = b.node(p, i);
        b.s0hat[n0] = b.s0[n0] / b.gop[n0];
        b.s1hat[n0] = b.s1[n0] / b.gop[n0];
    }
}

} // namespace

void simulate_gop_and_benchmark(PathBundle& b, const GopSpec& gop, Exec exec) {
    b.gop.assign(b.x.size(), 0.0);
    b.s0hat.assign(b.x.size(), 0.0);
    b.s1hat.assign(b.x.size(), 0.0);
    if (exec == Exec::serial) {
        for (int p = 0; p < b.n_paths; ++p) benchmark_one(b, gop, p);
        return;
    }
    // exceptions must not escape an OpenMP region
    std::vector<std::string> errors(static_cast<std::size_t>(b.n_paths));
    bool failed = false;
#pragma omp parallel for schedule(static) reduction(|| : failed)
    for (int p = 0; p < b.n_paths; ++p) {
        try {
            benchmark_one(b, gop, p);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(p)] = e.what();
            failed = true;
        }
    }
    if (failed)
        for (const auto& e : errors)
            if (!e.empty()) throw PositivityViolation(e);
}

double benchmark_direct_discrepancy(const PathBundle& b, const GopSpec& gop) {
    const MarketModel& m = gop.model();
    const double dt = b.grid.dt();
    double worst = 0.0;
    for (int p = 0; p < b.n_paths; ++p) {
        GopCache cache(gop);
        auto jumps = b.path_jumps(p);
        std::size_t jn = 0;
        double l0 = std::log(b.s0hat[b.node(p, 0)]);
        double l1 = std::log(b.s1hat[b.node(p, 0)]);
        for (int i = 0; i < b.grid.n_steps; ++i) {
            const double t = b.grid.t(i);
            const std::size_t n0 = b.node(p, i);
            const GopState& g = cache.at(t, b.x[n0], b.s1[n0]);
            const double vol1 = g.sigma1 - g.theta1;
            double cpsi = 0.0, ckt = 0.0;
            for (int k = 0; k < g.n_marks; ++k) {
                cpsi += m.lambda(k) * g.psi[static_cast<std::size_t>(k)];
                ckt += m.lambda(k) * g.k_theta[static_cast<std::size_t>(k)];
            }
            const double dw = b.dw[b.inc(p, i)];
            l0 += (-0.5 * g.theta1 * g.theta1 + cpsi) * dt - g.theta1 * dw;
            l1 += (-0.5 * vol1 * vol1 - ckt) * dt + vol1 * dw;
            for (; jn < jumps.size() && jumps[jn].step == i; ++jn) {
                const auto& e = jumps[jn];
                const GopState& gj = cache.at(t, e.x_pre, e.s1_pre);
                l0 += std::log1p(-gj.psi[static_cast<std::size_t>(e.mark)]);
                l1 += std::log1p(gj.k_theta[static_cast<std::size_t>(e.mark)]);
            }
            const std::size_t n1 = b.node(p, i + 1);
            worst = std::max(worst, std::abs(std::exp(l0) / b.s0hat[n1] - 1.0));
            worst = std::max(worst, std::abs(std::exp(l1) / b.s1hat[n1] - 1.0));
        }
    }
    return worst;
}

DriftStats martingale_drift_check(const PathBundle& b, Benchmarked component, Exec exec) {
    if (!b.benchmarked()) throw std::invalid_argument("paths carry no benchmarked columns");
    const std::vector<double>* col = nullptr;
    std::vector<double> ones;
    switch (component) {
    case Benchmarked::s0hat: col = &b.s0hat; break;
    case Benchmarked::s1hat: col = &b.s1hat; break;
    case Benchmarked::numeraire:
        ones.resize(b.gop.size());
        for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = b.gop[i] / b.gop[i];
        col = &ones;
        break;
    }
    const auto& y = *col;
    const int n = b.grid.n_steps;
    DriftStats out;
    out.steps.resize(static_cast<std::size_t>(n));
    auto one_step = [&](int i) {
        const MeanSe ms = mean_se(static_cast<std::size_t>(b.n_paths), [&](std::size_t p) {
            const int pi = static_cast<int>(p);
            return y[b.node(pi, i + 1)] - y[b.node(pi, i)];
        });
        out.steps[static_cast<std::size_t>(i)] = {i, ms.mean, ms.se, ms.z()};
    };
    if (exec == Exec::serial) {
        for (int i = 0; i < n; ++i) one_step(i);
    } else {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) one_step(i);
    }
    for (const auto& s : out.steps) {
        if (std::abs(s.z) > out.max_abs_z || (std::isnan(s.z))) {
            out.max_abs_z = std::isnan(s.z) ? std::numeric_limits<double>::infinity() : std::abs(s.z);
            out.argmax_step = s.step;
        }
    }
    out.passed = out.max_abs_z <= 3.0;
    out.terminal = mean_se(static_cast<std::size_t>(b.n_paths), [&](std::size_t p) {
        const int pi = static_cast<int>(p);
        return y[b.node(pi, n)] - y[b.node(pi, 0)];
    });
    return out;
}

} // namespace bhedge
