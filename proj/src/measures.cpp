#include "bhedge/measures.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace bhedge {

GirsanovSpec GirsanovSpec::constant(double xi, std::vector<double> eta) {
    GirsanovSpec s;
    s.n_marks = static_cast<int>(eta.size());
    s.xi = [xi](double, double, double) { return xi; };
    s.eta = [eta = std::move(eta)](int k, double, double, double) { return eta[static_cast<std::size_t>(k)]; };
    return s;
}

GirsanovSpec GirsanovSpec::from_gop(const GopSpec& gop, double xi_shift) {
    GirsanovSpec s;
    s.n_marks = gop.model().n_marks();
    const GopSpec* g = &gop;
    s.xi = [g, xi_shift](double t, double x, double s1) { return -g->theta1(t, x, s1) + xi_shift; };
    s.eta = [g](int k, double t, double x, double s1) { return -g->psi_theta(k, t, x, s1); };
    return s;
}

namespace {

void density_one(int p, const PathBundle& b, const MarketModel& m, const GirsanovSpec& spec, std::vector<double>& L) {
    const int N = b.grid.n_steps;
    const double dt = b.grid.dt();
    double logl = 0.0;
    L[b.node(p, 0)] = 1.0;
    auto jumps = b.path_jumps(p);
    std::size_t j = 0;
    for (int i = 0; i < N; ++i) {
        const std::size_t n0 = b.node(p, i);
        const double t = b.grid.t(i), x = b.x[n0], s1 = b.s1[n0];
        const double xi = spec.xi(t, x, s1);
        double comp = 0.0;
        for (int k = 0; k < spec.n_marks; ++k) comp += m.lambda(k) * spec.eta(k, t, x, s1);
        logl += xi * b.dw[b.inc(p, i)] - 0.5 * xi * xi * dt - comp * dt;
        for (; j < jumps.size() && jumps[j].step == i; ++j) {
            const JumpEvent& e = jumps[j];
            const double f = 1.0 + spec.eta(e.mark, t, e.x_pre, e.s1_pre);
            if (!(f > 0.0))
                throw InvalidTilt(fmt::format("1 + eta = {} at path {}, step {}, mark {}", f, p, i, e.mark));
            logl += std::log(f);
        }
        L[b.node(p, i + 1)] = std::exp(logl);
    }
}

} // namespace

DensityPaths girsanov_density_path(const PathBundle& b, const MarketModel& m, const GirsanovSpec& spec, Exec exec) {
    if (spec.n_marks != m.n_marks()) throw std::invalid_argument("tilt and model disagree on the number of marks");
    DensityPaths d;
    d.n_paths = b.n_paths;
    d.n_steps = b.grid.n_steps;
    d.L.assign(static_cast<std::size_t>(b.n_paths) * static_cast<std::size_t>(b.grid.n_steps + 1), 0.0);
    if (exec == Exec::serial) {
        for (int p = 0; p < b.n_paths; ++p) density_one(p, b, m, spec, d.L);
    } else {
        std::vector<std::string> errors(static_cast<std::size_t>(b.n_paths));
#pragma omp parallel for schedule(static)
        for (int p = 0; p < b.n_paths; ++p) {
            try {
                density_one(p, b, m, spec, d.L);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(p)] = e.what();
            }
        }
        for (const auto& e : errors)
            if (!e.empty()) throw InvalidTilt(e);
    }
    d.terminal = mean_se(static_cast<std::size_t>(b.n_paths), [&](std::size_t p) { return d.at(static_cast<int>(p), d.n_steps); });
    d.min_l = *std::min_element(d.L.begin(), d.L.end());
    return d;
}

double martingale_measure_residual(const MarketModel& m, const GirsanovSpec& spec, double t, double x, double s1) {
    double jump = 0.0;
    for (int k = 0; k < m.n_marks(); ++k)
        jump += m.lambda(k) * m.k1[static_cast<std::size_t>(k)](t, x, s1) * spec.eta(k, t, x, s1);
    return spec.xi(t, x, s1) * m.sigma1(t, x, s1) + jump - (m.r(t, x) - m.b1(t, x, s1));
}

MeasureConditions measure_conditions_check(const GopSpec& gop, const StateBox& box) {
    MeasureConditions c;
    const MarketModel& m = gop.model();
    c.nu_total = m.jumps.total_intensity();
    for (const auto& pt : box.points()) {
        const GopState g = gop.at(pt[0], pt[1], pt[2]);
        c.sup_theta = std::max(c.sup_theta, std::abs(g.theta1));
        for (int k = 0; k < g.n_marks; ++k) c.sup_psi = std::max(c.sup_psi, std::abs(g.psi[static_cast<std::size_t>(k)]));
        ++c.n_points;
    }
    c.passed = std::isfinite(c.sup_theta) && std::isfinite(c.sup_psi) && std::isfinite(c.nu_total) && c.sup_psi < 1.0;
    if (c.sup_psi > 1.0 - 1e-3)
        c.warnings.push_back(fmt::format("sup psi = {:.12g} is within 1e-3 of the no-arbitrage limit 1", c.sup_psi));
    return c;
}

MeanSe reweighted_drift(const PathBundle& b, const DensityPaths& d) {
    const int N = b.grid.n_steps;
    return mean_se(static_cast<std::size_t>(b.n_paths), [&](std::size_t pp) {
        const int p = static_cast<int>(pp);
        const std::size_t n0 = b.node(p, 0), nT = b.node(p, N);
        return d.at(p, N) * (b.s1[nT] / b.s0[nT] - b.s1[n0] / b.s0[n0]);
    });
}

} // namespace bhedge
