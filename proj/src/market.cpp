#include "bhedge/market.hpp"

#include <cmath>
#include <fmt/format.h>
#include <set>

namespace bhedge {

const char* form_name(Coefficient::Form f) {
    switch (f) {
    case Coefficient::Form::constant: return "constant";
    case Coefficient::Form::affine: return "affine";
    case Coefficient::Form::mean_reverting: return "mean-reverting";
    }
    return "constant";
}

double JumpMeasure::total_intensity() const {
    double s = 0.0;
    for (double l : intensities) s += l;
    return s;
}

double MarketModel::comp_x(double t, double x) const {
    double s = 0.0;
    for (int k = 0; k < n_marks(); ++k) s += lambda(k) * k0[static_cast<std::size_t>(k)](t, x);
    return s;
}

double MarketModel::comp_s1(double t, double x, double s1) const {
    double s = 0.0;
    for (int k = 0; k < n_marks(); ++k) s += lambda(k) * k1[static_cast<std::size_t>(k)](t, x, s1);
    return s;
}

namespace {

std::vector<double> axis(double lo, double hi, int n) {
    if (hi <= lo || n <= 1) return {lo};
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return v;
}

} // namespace

std::vector<std::array<double, 3>> StateBox::points() const {
    std::vector<std::array<double, 3>> out;
    for (double t : axis(t_lo, t_hi, n_per_axis))
        for (double x : axis(x_lo, x_hi, n_per_axis))
            for (double s : axis(s1_lo, s1_hi, n_per_axis)) out.push_back({t, x, s});
    return out;
}

std::vector<std::array<double, 3>> StateBox::sample(int n, std::uint64_t seed) const {
    StreamRng rng(seed, 0x5eed, 0);
    std::vector<std::array<double, 3>> out(static_cast<std::size_t>(n));
    for (auto& p : out) {
        p[0] = t_lo + (t_hi - t_lo) * rng.uniform();
        p[1] = x_lo + (x_hi - x_lo) * rng.uniform();
        p[2] = s1_lo + (s1_hi - s1_lo) * rng.uniform();
    }
    return out;
}

void check_measure(const JumpMeasure& m) {
    if (m.marks.empty() && !m.intensities.empty())
        throw MalformedMeasure("jump measure has intensities but no marks");
    if (m.marks.size() != m.intensities.size())
        throw MalformedMeasure(fmt::format("jump measure has {} marks but {} intensities", m.marks.size(),
                                           m.intensities.size()));
    if (m.size() > static_cast<std::size_t>(kMaxMarks))
        throw MalformedMeasure(fmt::format("at most {} marks supported", kMaxMarks));
    std::set<double> seen;
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (!std::isfinite(m.intensities[k]) || !(m.intensities[k] > 0.0))
            throw MalformedMeasure(fmt::format("intensity of mark {} is {}", k, m.intensities[k]));
        if (!seen.insert(m.marks[k]).second) throw MalformedMeasure(fmt::format("duplicate mark value {}", m.marks[k]));
    }
    if (!std::isfinite(m.total_intensity())) throw MalformedMeasure("total intensity is not finite");
}

ValidationReport validate_model(const MarketModel& model, const StateBox& box) {
    check_measure(model.jumps);
    if (model.k0.size() != model.jumps.size() || model.k1.size() != model.jumps.size())
        throw MalformedMeasure("K0/K1 must have one coefficient per mark");

    ValidationReport rep;
    auto add = [&](std::string what, double t, double x, double s1, double v) {
        rep.violations.push_back({std::move(what), t, x, s1, v});
    };
    if (!(std::abs(model.rho) <= 1.0)) add("rho outside [-1,1]", 0, 0, 0, model.rho);
    if (!(model.s1_0 > 0.0)) add("s1_0 not positive", 0, 0, 0, model.s1_0);
    if (model.prior.kind == XPrior::Kind::discrete) {
        double total = 0.0;
        for (double p : model.prior.probs) total += p;
        if (model.prior.values.empty() || model.prior.values.size() != model.prior.probs.size() ||
            std::abs(total - 1.0) > 1e-12)
            add("discrete prior malformed", 0, 0, 0, total);
    }

    for (const auto& pt : box.points()) {
        const double t = pt[0], x = pt[1], s1 = pt[2];
        struct Named {
            const char* name;
            double v;
        };
        const Named coefs[] = {{"r", model.r(t, x)},          {"b0", model.b0(t, x)},
                               {"sigma0", model.sigma0(t, x)}, {"b1", model.b1(t, x, s1)},
                               {"sigma1", model.sigma1(t, x, s1)}};
        for (const auto& c : coefs)
            if (!std::isfinite(c.v)) add(fmt::format("{} not finite", c.name), t, x, s1, c.v);
        if (model.sigma1(t, x, s1) < 0.0) add("sigma1 negative", t, x, s1, model.sigma1(t, x, s1));
        if (model.sigma0(t, x) < 0.0) add("sigma0 negative", t, x, s1, model.sigma0(t, x));
        for (int k = 0; k < model.n_marks(); ++k) {
            const double j0 = model.k0[static_cast<std::size_t>(k)](t, x);
            const double j1 = model.k1[static_cast<std::size_t>(k)](t, x, s1);
            if (!std::isfinite(j0)) add(fmt::format("K0[{}] not finite", k), t, x, s1, j0);
            if (!std::isfinite(j1)) add(fmt::format("K1[{}] not finite", k), t, x, s1, j1);
            if (!(1.0 + j1 > 0.0)) add(fmt::format("positivity: 1+K1[{}] <= 0", k), t, x, s1, 1.0 + j1);
        }
    }
    return rep;
}

StepNoise draw_step_noise(StreamRng& rng, double dt, const MarketModel& model) {
    StepNoise n;
    n.z_w = rng.normal();
    n.z_perp = rng.normal();
    const double lam = model.jumps.total_intensity();
    if (lam > 0.0) {
        double tau = rng.exponential(lam);
        while (tau < dt) {
            if (n.n_jumps == static_cast<int>(n.marks.size()))
                throw std::runtime_error("more than 16 jumps in one step; refine the time grid");
            const double u = rng.uniform() * lam;
            double acc = 0.0;
            int k = 0;
            for (; k < model.n_marks() - 1; ++k) {
                acc += model.lambda(k);
                if (u < acc) break;
            }
            n.marks[static_cast<std::size_t>(n.n_jumps++)] = k;
            tau += rng.exponential(lam);
        }
    }
    return n;
}

double sample_prior(const MarketModel& model, StreamRng& rng) {
    const auto& pr = model.prior;
    switch (pr.kind) {
    case XPrior::Kind::dirac: return model.x0;
    case XPrior::Kind::gaussian: return pr.mean + pr.sd * rng.normal();
    case XPrior::Kind::discrete: {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < pr.values.size(); ++i) {
            acc += pr.probs[i];
            if (u < acc) return pr.values[i];
        }
        return pr.values.back();
    }
    }
    return model.x0;
}

namespace {

constexpr std::uint64_t kInitStream = ~std::uint64_t{0};

void simulate_one(const MarketModel& model, const TimeGrid& grid, std::uint64_t seed, int p, PathBundle& b,
                  std::vector<JumpEvent>& events) {
    const int n = grid.n_steps;
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    const double rho_perp = std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho));

    StreamRng init(seed, static_cast<std::uint64_t>(p), kInitStream);
    double x = sample_prior(model, init);
    double log_s0 = 0.0;
    double log_s1 = std::log(model.s1_0);

    b.x[b.node(p, 0)] = x;
    b.s0[b.node(p, 0)] = 1.0;
    b.s1[b.node(p, 0)] = model.s1_0;
    for (int i = 0; i < n; ++i) {
        const double t = grid.t(i);
        StreamRng rng(seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(i));
        const StepNoise nz = draw_step_noise(rng, dt, model);
        const double dw = sq * nz.z_w;
        const double du = model.rho * dw + rho_perp * sq * nz.z_perp;
        const double s1 = std::exp(log_s1);

        const double sig1 = model.sigma1(t, x, s1);
        const double drift1 = model.b1(t, x, s1) - model.comp_s1(t, x, s1);
        log_s0 += model.r(t, x) * dt;
        log_s1 += (drift1 - 0.5 * sig1 * sig1) * dt + sig1 * dw;
        x += (model.b0(t, x) - model.comp_x(t, x)) * dt + model.sigma0(t, x) * du;

        for (int j = 0; j < nz.n_jumps; ++j) {
            const int k = nz.marks[static_cast<std::size_t>(j)];
            const double s1_pre = std::exp(log_s1);
            const double k1 = model.k1[static_cast<std::size_t>(k)](t, x, s1_pre);
            events.push_back({i, k, x, s1_pre, k1});
            x += model.k0[static_cast<std::size_t>(k)](t, x);
            log_s1 += std::log1p(k1);
        }
        b.dw[b.inc(p, i)] = dw;
        b.du[b.inc(p, i)] = du;
        b.x[b.node(p, i + 1)] = x;
        b.s0[b.node(p, i + 1)] = std::exp(log_s0);
        b.s1[b.node(p, i + 1)] = std::exp(log_s1);
    }
}

} // namespace

PathBundle simulate_paths(const MarketModel& model, const TimeGrid& grid, int n_paths, std::uint64_t seed, Exec exec) {
    if (n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
    if (!(grid.T > 0.0) || grid.n_steps < 1) throw std::invalid_argument("time grid needs T > 0 and n_steps >= 1");
    check_measure(model.jumps);

    PathBundle b;
    b.grid = grid;
    b.n_paths = n_paths;
    const auto nodes = static_cast<std::size_t>(n_paths) * static_cast<std::size_t>(grid.n_steps + 1);
    const auto incs = static_cast<std::size_t>(n_paths) * static_cast<std::size_t>(grid.n_steps);
    b.x.resize(nodes);
    b.s0.resize(nodes);
    b.s1.resize(nodes);
    b.dw.resize(incs);
    b.du.resize(incs);

    std::vector<std::vector<JumpEvent>> per_path(static_cast<std::size_t>(n_paths));
    if (exec == Exec::serial) {
        for (int p = 0; p < n_paths; ++p) simulate_one(model, grid, seed, p, b, per_path[static_cast<std::size_t>(p)]);
    } else {
#pragma omp parallel for schedule(static)
        for (int p = 0; p < n_paths; ++p) simulate_one(model, grid, seed, p, b, per_path[static_cast<std::size_t>(p)]);
    }

    b.jump_begin.resize(static_cast<std::size_t>(n_paths) + 1);
    std::size_t total = 0;
    for (int p = 0; p < n_paths; ++p) {
        b.jump_begin[static_cast<std::size_t>(p)] = total;
        total += per_path[static_cast<std::size_t>(p)].size();
    }
    b.jump_begin.back() = total;
    b.jumps.reserve(total);
    for (auto& v : per_path) b.jumps.insert(b.jumps.end(), v.begin(), v.end());
    return b;
}

} // namespace bhedge
