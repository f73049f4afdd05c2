#include "bhedge/filtering.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <limits>

namespace bhedge {

double ParticleFilter::ess() const {
    double s = 0.0;
    for (double w : weights) s += w * w;
    return s > 0.0 ? 1.0 / s : 0.0;
}

double ParticleFilter::mean() const {
    return project(*this, [](double x) { return x; });
}

double ParticleFilter::sd() const {
    const double m = mean();
    return std::sqrt(std::max(0.0, project(*this, [m](double x) { return (x - m) * (x - m); })));
}

double ParticleFilter::weight_error() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return std::abs(s - 1.0);
}

ParticleFilter init_filter(const XPrior& prior, double x0, int n_particles, std::uint64_t seed, std::uint64_t stream,
                           double ess_fraction) {
    ParticleFilter pf;
    pf.seed = seed;
    pf.stream = stream;
    pf.ess_fraction = ess_fraction;
    if (prior.kind == XPrior::Kind::discrete) {
        if (prior.values.empty() || prior.values.size() != prior.probs.size())
            throw std::invalid_argument("empty or malformed discrete prior");
        if (n_particles <= 0 || n_particles == static_cast<int>(prior.values.size())) {
            pf.particles = prior.values;
            pf.weights = prior.probs;
            double s = 0.0;
            for (double w : pf.weights) s += w;
            for (double& w : pf.weights) w /= s;
            pf.enumerating = true;
            return pf;
        }
    }
    const int n = n_particles > 0 ? n_particles : (prior.kind == XPrior::Kind::dirac ? 1 : 1000);
    pf.particles.resize(static_cast<std::size_t>(n));
    pf.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
    StreamRng rng(seed, stream, ~std::uint64_t{0});
    MarketModel proxy;
    proxy.x0 = x0;
    proxy.prior = prior;
    for (auto& x : pf.particles) x = sample_prior(proxy, rng);
    pf.enumerating = prior.kind == XPrior::Kind::dirac;
    return pf;
}

ObservationStep observe(const PathBundle& b, const GopSpec& gop, int p, int i) {
    ObservationStep o;
    o.step = i;
    o.t = b.grid.t(i);
    o.dt = b.grid.dt();
    const std::size_t n0 = b.node(p, i), n1 = b.node(p, i + 1);
    o.s0 = b.s0[n0];
    o.s1 = b.s1[n0];
    o.log_return = std::log(b.s1[n1] / b.s1[n0]);
    o.s0_log_increment = std::log(b.s0[n1] / b.s0[n0]);
    o.has_gop = b.benchmarked();
    if (o.has_gop) o.gop_log_increment = std::log(b.gop[n1] / b.gop[n0]);
    for (const auto& e : b.path_jumps(p)) {
        if (e.step != i) continue;
        const GopState g = gop.at(o.t, e.x_pre, e.s1_pre);
        if (o.has_gop) o.gop_log_increment += std::log1p(-g.psi[static_cast<std::size_t>(e.mark)]);
        if (e.k1 == 0.0) continue;  // invisible in prices
        o.log_return -= std::log1p(e.k1);
        if (o.n_jumps < static_cast<int>(o.jump_size.size())) {
            o.jump_size[static_cast<std::size_t>(o.n_jumps)] = e.k1;
            o.jump_s1_pre[static_cast<std::size_t>(o.n_jumps)] = e.s1_pre;
            ++o.n_jumps;
        }
    }
    return o;
}

void reweight_log(ParticleFilter& pf, const std::vector<double>& ll, const char* what) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pf.size(); ++i)
        if (pf.weights[i] > 0.0) top = std::max(top, ll[i]);
    if (!std::isfinite(top))
        throw FilterDegeneracy(fmt::format("{} update at step {} is incompatible with every particle", what, pf.step));
    double s = 0.0;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        pf.weights[i] *= std::exp(ll[i] - top);
        s += pf.weights[i];
    }
    if (!(s > 0.0))
        throw FilterDegeneracy(fmt::format("{} update at step {} left no weight", what, pf.step));
    for (double& w : pf.weights) w /= s;
    maybe_resample(pf);
}

void maybe_resample(ParticleFilter& pf) {
    if (pf.enumerating) return;
    const double n = static_cast<double>(pf.size());
    if (pf.ess() >= pf.ess_fraction * n) return;
    // systematic
    StreamRng rng(pf.seed, pf.stream, 2 * static_cast<std::uint64_t>(pf.step) + 1);
    const double u0 = rng.uniform() / n;
    std::vector<double> out(pf.size());
    double cum = pf.weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        const double u = u0 + static_cast<double>(i) / n;
        while (u > cum && j + 1 < pf.size()) cum += pf.weights[++j];
        out[i] = pf.particles[j];
    }
    pf.particles = std::move(out);
    pf.weights.assign(pf.size(), 1.0 / n);
    ++pf.resamples;
}

void filter_step(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs, const FilterSettings& cfg) {
    const MarketModel& m = gop.model();
    const double dt = obs.dt, t = obs.t, s1 = obs.s1;
    const double sq = std::sqrt(dt);
    const std::size_t n = pf.size();
    std::vector<double> ll(n), dw(n);
    StreamRng rng(pf.seed, pf.stream, 2 * static_cast<std::uint64_t>(obs.step));
    GopCache cache(gop);
    auto consistent = [&](double pred, double seen) { return std::abs(pred - seen) <= cfg.obs_tol * (1.0 + std::abs(seen)); };

    for (std::size_t i = 0; i < n; ++i) {
        const double x = pf.particles[i];
        const GopState& g = cache.at(t, x, s1);
        const double sig = g.sigma1;
        const double mean = (m.b1(t, x, s1) - m.comp_s1(t, x, s1) - 0.5 * sig * sig) * dt;
        double l = 0.0;
        if (sig > 0.0) {
            dw[i] = (obs.log_return - mean) / sig;
            l = -0.5 * dw[i] * dw[i] / dt - std::log(sig);
        } else {
            dw[i] = sq * rng.normal();
            if (!consistent(mean, obs.log_return)) l = -INFINITY;
        }
        double lam_seen = 0.0;
        for (int k = 0; k < m.n_marks(); ++k)
            if (g.k1[static_cast<std::size_t>(k)] != 0.0) lam_seen += m.lambda(k);
        l -= lam_seen * dt;
        if (!consistent(m.r(t, x) * dt, obs.s0_log_increment)) l = -INFINITY;
        if (obs.has_gop) {
            double cpsi = 0.0;
            for (int k = 0; k < g.n_marks; ++k) cpsi += m.lambda(k) * g.psi[static_cast<std::size_t>(k)];
            const double pred = (m.r(t, x) + 0.5 * g.theta1 * g.theta1 - cpsi) * dt + g.theta1 * dw[i];
            if (!consistent(pred, obs.gop_log_increment)) l = -INFINITY;
        }
        ll[i] = l;
    }
    // propagation draws come from the same per-step stream, so keep them
    // ordered by particle before any resampling reshuffles the cloud
    std::vector<double> moved(n);
    const double rho_perp = std::sqrt(std::max(0.0, 1.0 - m.rho * m.rho));
    for (std::size_t i = 0; i < n; ++i) {
        double x = pf.particles[i];
        const double du = m.rho * dw[i] + rho_perp * sq * rng.normal();
        const GopState& g = cache.at(t, x, s1);
        double xn = x + (m.b0(t, x) - m.comp_x(t, x)) * dt + m.sigma0(t, x) * du;
        // hidden marks: move X without touching prices
        double lam_hidden = 0.0;
        for (int k = 0; k < m.n_marks(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            if (g.k1[ku] == 0.0 && !m.k0[ku].is_zero()) lam_hidden += m.lambda(k);
        }
        if (lam_hidden > 0.0) {
            double tau = rng.exponential(lam_hidden);
            while (tau < dt) {
                const double u = rng.uniform() * lam_hidden;
                double acc = 0.0;
                for (int k = 0; k < m.n_marks(); ++k) {
                    const auto ku = static_cast<std::size_t>(k);
                    if (!(g.k1[ku] == 0.0 && !m.k0[ku].is_zero())) continue;
                    acc += m.lambda(k);
                    if (u < acc) {
                        xn += m.k0[ku](t, xn);
                        break;
                    }
                }
                tau += rng.exponential(lam_hidden);
            }
        }
        moved[i] = xn;
    }
    // weights belong to the pre-move particles; attach them before resampling
    const std::vector<double> before = pf.particles;
    pf.particles = moved;
    try {
        reweight_log(pf, ll, "diffusion");
    } catch (const FilterDegeneracy&) {
        pf.particles = before;
        throw;
    }
}

void jump_update(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs, int j, const FilterSettings& cfg) {
    const MarketModel& m = gop.model();
    const double a = obs.jump_size[static_cast<std::size_t>(j)];
    const double s1_pre = obs.jump_s1_pre[static_cast<std::size_t>(j)];
    const double t = obs.t;
    const std::size_t n = pf.size();
    StreamRng rng(pf.seed, pf.stream ^ 0x6a09e667f3bcc909ULL, 16 * static_cast<std::uint64_t>(obs.step) + static_cast<std::uint64_t>(j));
    std::vector<double> ll(n), moved(n);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pf.particles[i];
        std::array<double, kMaxMarks> lam{};
        double total = 0.0;
        for (int k = 0; k < m.n_marks(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const double kk = m.k1[ku](t, x, s1_pre);
            const double gap = std::abs(kk - a);
            nearest = std::min(nearest, gap);
            if (gap <= cfg.jump_tol_rel * std::max(std::abs(a), std::abs(kk))) {
                lam[ku] = m.lambda(k);
                total += lam[ku];
            }
        }
        ll[i] = total > 0.0 ? std::log(total) : -INFINITY;
        double xn = x;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            for (int k = 0; k < m.n_marks(); ++k) {
                acc += lam[static_cast<std::size_t>(k)];
                if (lam[static_cast<std::size_t>(k)] > 0.0 && u < acc) {
                    xn = x + m.k0[static_cast<std::size_t>(k)](t, x);
                    break;
                }
            }
        }
        moved[i] = xn;
    }
    const std::vector<double> before = pf.particles;
    pf.particles = moved;
    try {
        reweight_log(pf, ll, "jump");
    } catch (const FilterDegeneracy&) {
        pf.particles = before;
        throw FilterDegeneracy(fmt::format("observed jump {} at step {} matches no particle (nearest mark off by {})",
                                           a, obs.step, nearest));
    }
}

void assimilate(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs, const FilterSettings& cfg) {
    filter_step(pf, gop, obs, cfg);
    if (obs.n_jumps > 1) ++pf.multi_jump_steps;
    for (int j = 0; j < obs.n_jumps; ++j) jump_update(pf, gop, obs, j, cfg);
    ++pf.step;
}

FilterTrajectories filter_paths(const PathBundle& b, const GopSpec& gop, const FilterSettings& cfg, std::uint64_t seed,
                                Exec exec) {
    FilterTrajectories ft;
    ft.n_paths = b.n_paths;
    ft.n_steps = b.grid.n_steps;
    const std::size_t nodes = static_cast<std::size_t>(b.n_paths) * static_cast<std::size_t>(b.grid.n_steps + 1);
    ft.mean.assign(nodes, 0.0);
    ft.sd.assign(nodes, 0.0);
    ft.ess.assign(nodes, 0.0);
    struct Tally {
        int resamples = 0, multi = 0;
        double werr = 0.0;
        std::string error;
    };
    std::vector<Tally> tally(static_cast<std::size_t>(b.n_paths));
    const MarketModel& m = gop.model();
    auto one = [&](int p) {
        Tally& t = tally[static_cast<std::size_t>(p)];
        try {
            ParticleFilter pf = init_filter(m.prior, m.x0, cfg.n_particles, seed, static_cast<std::uint64_t>(p), cfg.ess_fraction);
            for (int i = 0;; ++i) {
                const std::size_t n = b.node(p, i);
                ft.mean[n] = pf.mean();
                ft.sd[n] = pf.sd();
                ft.ess[n] = pf.ess();
                t.werr = std::max(t.werr, pf.weight_error());
                if (i == b.grid.n_steps) break;
                assimilate(pf, gop, observe(b, gop, p, i), cfg);
            }
            t.resamples = pf.resamples;
            t.multi = pf.multi_jump_steps;
        } catch (const std::exception& e) {
            t.error = fmt::format("path {}: {}", p, e.what());
        }
    };
    if (exec == Exec::serial) {
        for (int p = 0; p < b.n_paths; ++p) one(p);
    } else {
#pragma omp parallel for schedule(dynamic, 64)
        for (int p = 0; p < b.n_paths; ++p) one(p);
    }
    for (const auto& t : tally) {
        if (!t.error.empty()) throw FilterDegeneracy(t.error);
        ft.resamples += t.resamples;
        ft.multi_jump_steps += t.multi;
        ft.max_weight_error = std::max(ft.max_weight_error, t.werr);
    }
    return ft;
}

} // namespace bhedge
