#include <gtest/gtest.h>

#include <cmath>

#include "bhedge/config.hpp"
#include "bhedge/hedging.hpp"

using namespace bhedge;

namespace {

MarketModel one_mark_model() {
    MarketModel m;
    m.r = Coefficient::constant(0.0);
    m.b1 = Coefficient::constant(0.0);
    m.sigma1 = Coefficient::constant(0.2);
    m.jumps.marks = {0.0};
    m.jumps.intensities = {1.0};
    m.k0 = {Coefficient::constant(0.0)};
    m.k1 = {Coefficient::constant(0.0)};
    return m;
}

GopState toy_state() {
    GopState g;
    g.theta1 = 0.1;
    g.sigma1 = 0.2;
    g.n_marks = 1;
    g.psi[0] = 0.2;
    g.k_theta[0] = 0.2;
    return g;
}

struct Pipeline {
    ScenarioConfig cfg;
    GopSpec gop;
    PathBundle paths;
    PriceSurface surface;

    Pipeline(const std::string& fixture, int n_paths, int surface_paths)
        : cfg(parse_config(fixture_json(fixture))), gop(cfg.model, cfg.theta1_shift) {
        paths = simulate_paths(cfg.model, cfg.grid, n_paths, cfg.seed);
        simulate_gop_and_benchmark(paths, gop);
        cfg.surface.n_paths = surface_paths;
        surface = estimate_price_function(gop, cfg.claim, cfg.grid, cfg.surface);
    }
};

} // namespace

TEST(Brackets, HandExamples) {
    const MarketModel m = one_mark_model();
    const GopState g = toy_state();
    const StatePoint p{0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
    const BracketDensities bd = bracket_densities(m, g, PartialSet{}, p);
    EXPECT_NEAR(bd.a00, 0.05, 1e-15);
    EXPECT_NEAR(bd.a01, -0.05, 1e-15);
    EXPECT_NEAR(bd.a11, 0.01 + 0.04, 1e-15);
    EXPECT_GE(bd.a00 * bd.a11 - bd.a01 * bd.a01, -1e-12);
}

TEST(Brackets, IdentityClaimGivesUnitDelta) {
    const MarketModel m = one_mark_model();
    GopState g = toy_state();
    g.k_theta[0] = -0.3;
    const StatePoint p{0.0, 0.0, 1.0, 1.0, 0.7, 1.4};
    PartialSet d;
    d.dsh1 = 1.0;
    d.n_marks = 1;
    d.jump[0] = p.sh1 * g.k_theta[0];
    const BracketDensities bd = bracket_densities(m, g, d, p);
    EXPECT_NEAR(bd.h0, bd.a01, 1e-15);
    EXPECT_NEAR(bd.h1, bd.a11, 1e-15);
    const StrategyResult s = full_info_strategy(bd);
    EXPECT_FALSE(s.singular);
    EXPECT_NEAR(s.delta.v0, 0.0, 1e-10);
    EXPECT_NEAR(s.delta.v1, 1.0, 1e-10);
    EXPECT_NEAR(eta_component(p.sh1, s.delta, p.sh0, p.sh1), 0.0, 1e-10);
}

TEST(Brackets, ConstantClaimGivesZeroDelta) {
    const MarketModel m = one_mark_model();
    const StatePoint p{0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
    const BracketDensities bd = bracket_densities(m, toy_state(), PartialSet{}, p);
    const StrategyResult s = full_info_strategy(bd);
    EXPECT_EQ(s.delta.v0, 0.0);
    EXPECT_EQ(s.delta.v1, 0.0);
    EXPECT_EQ(eta_component(3.0, s.delta, 1.0, 1.0), 3.0);
}

TEST(Strategy, TwoScenarioProjection) {
    // hidden a in {0.04, 0.16} with delta^F in {1, 2}: 0.18 / 0.10
    const Sym2 pa{1.0, 0.0, 0.5 * (0.04 + 0.16)};
    const Vec2 padf{0.0, 0.5 * (0.04 * 1.0 + 0.16 * 2.0)};
    const StrategyResult s = partial_info_strategy(pa, padf);
    EXPECT_NEAR(s.delta.v1, 1.8, 1e-12);
    EXPECT_NEAR(eta_component(1.5, s.delta, 1.0, 1.2), 1.5 - 1.8 * 1.2, 1e-12);
}

TEST(Strategy, FullInformationProjectionIsIdentity) {
    const Sym2 a{0.05, -0.02, 0.09};
    const Vec2 df{0.3, 1.1};
    const StrategyResult s = partial_info_strategy(a, mul(a, df));
    EXPECT_NEAR(s.delta.v0, 0.3, 1e-12);
    EXPECT_NEAR(s.delta.v1, 1.1, 1e-12);
}

TEST(Strategy, RankOneFallsBackToPseudoInverse) {
    // a = u u^T with u = (1, -1): only the u-component of h is hedgeable
    const Sym2 a{1.0, -1.0, 1.0};
    const StrategyResult s = partial_info_strategy(a, Vec2{2.0, -2.0});
    EXPECT_TRUE(s.singular);
    EXPECT_NEAR(s.delta.v0, 1.0, 1e-12);
    EXPECT_NEAR(s.delta.v1, -1.0, 1e-12);
    const StrategyResult z = partial_info_strategy(Sym2{}, Vec2{1.0, 1.0});
    EXPECT_TRUE(z.singular);
    EXPECT_EQ(z.delta.v0, 0.0);
}

TEST(Cost, ZeroStrategyCostIsValue) {
    const std::vector<double> v{1.0, 1.2, 0.9, 1.4};
    const std::vector<Vec2> d(3);
    const std::vector<double> s0{1, 1, 1, 1}, s1{1.0, 1.1, 0.8, 1.3};
    EXPECT_EQ(cost_process(v, d, s0, s1), v);
}

TEST(Cost, ReplicationIsConstant) {
    const std::vector<double> s1{1.0, 1.1, 0.8, 1.3};
    const std::vector<Vec2> d(3, Vec2{0.0, 1.0});
    const auto c = cost_process(s1, d, std::vector<double>(4, 1.0), s1);
    for (double x : c) EXPECT_NEAR(x, 1.0, 1e-15);
}

TEST(Cost, MisalignedGridsThrow) {
    EXPECT_THROW(cost_process({1, 2, 3}, std::vector<Vec2>(3), {1, 1, 1}, {1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(cost_process({1, 2, 3}, std::vector<Vec2>(2), {1, 1}, {1, 1, 1}), std::invalid_argument);
}

TEST(Risk, ZeroStrategyIsSampleSecondMoment) {
    // two paths, two steps; costs equal values
    const std::vector<double> costs{1.0, 1.5, 2.0, 1.0, 0.5, 0.0};
    const MeanSe r = risk_process(costs, 2, 0);
    EXPECT_DOUBLE_EQ(r.mean, 1.0);
    const MeanSe r1 = risk_process(costs, 2, 1);
    EXPECT_DOUBLE_EQ(r1.mean, 0.25);
}

TEST(Orthogonality, ZeroResidualGivesZeroZ) {
    const std::vector<double> l(100, 0.3), gains(100, 1.0);
    const OrthogonalityStat s = orthogonality_stat(l, gains, "unit", 1e-12);
    EXPECT_EQ(s.z, 0.0);
    EXPECT_EQ(s.name, "unit");
}

TEST(Quadrature, GaussHermiteMoments) {
    for (int n : {1, 3, 5, 7, 24}) {
        const Quadrature q = gauss_hermite(n);
        double m0 = 0, m1 = 0, m2 = 0, m4 = 0;
        for (std::size_t i = 0; i < q.nodes.size(); ++i) {
            const double z = q.nodes[i], w = q.weights[i];
            m0 += w;
            m1 += w * z;
            m2 += w * z * z;
            m4 += w * z * z * z * z;
        }
        EXPECT_NEAR(m0, 1.0, 1e-13) << n;
        EXPECT_NEAR(m1, 0.0, 1e-13) << n;
        if (n >= 2) EXPECT_NEAR(m2, 1.0, 1e-13) << n;
        if (n >= 3) EXPECT_NEAR(m4, 3.0, 1e-12) << n;
    }
    EXPECT_THROW(gauss_hermite(0), std::invalid_argument);
}

TEST(Quadrature, SimpsonHandlesKinks) {
    const Quadrature q = normal_simpson(401);
    double m0 = 0, m2 = 0, m4 = 0, kink = 0, kink_gh = 0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        const double z = q.nodes[i], w = q.weights[i];
        m0 += w;
        m2 += w * z * z;
        m4 += w * z * z * z * z;
        kink += w * std::max(z - 0.3, 0.0) * z;
    }
    const Quadrature gh = gauss_hermite(7);
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) kink_gh += gh.weights[i] * std::max(gh.nodes[i] - 0.3, 0.0) * gh.nodes[i];
    // E[(Z - k)+ Z] = P(Z > k)
    const double exact = 0.5 * std::erfc(0.3 / std::sqrt(2.0));
    EXPECT_NEAR(m0, 1.0, 1e-14);
    EXPECT_NEAR(m2, 1.0, 1e-8);
    EXPECT_NEAR(m4, 3.0, 1e-7);
    EXPECT_NEAR(kink, exact, 2e-4);
    EXPECT_LT(std::abs(kink - exact), std::abs(kink_gh - exact));
    EXPECT_THROW(normal_simpson(400), std::invalid_argument);
}

TEST(StepMoments, ApproachContinuousBrackets) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    GopCache cache(gop);
    const CallablePrice f([](const StatePoint& p) { return p.sh1 * p.sh1; });
    const StatePoint p{0.2, 1.0, 1.0, 1.1, 0.95, 1.1 * 0.95};  // sh1 = s1 * sh0 / s0
    const Quadrature q = gauss_hermite(7);
    const GopState g = gop.at(p.t, p.x, p.s1);
    const BracketDensities bd = bracket_densities(c.model, g, price_partials(f, p, gop), p);
    for (double dt : {1e-3, 1e-4}) {
        const StepMoments sm = step_moments(gop, cache, f, p, dt, q, 3);
        EXPECT_NEAR(sm.a.a00 / dt, bd.a00, 20.0 * dt * std::abs(bd.a00) + 1e-3 * std::sqrt(dt));
        EXPECT_NEAR(sm.a.a11 / dt, bd.a11, 20.0 * dt * std::abs(bd.a11) + 1e-3 * std::sqrt(dt));
        EXPECT_NEAR(sm.a.a01 / dt, bd.a01, 20.0 * dt * std::abs(bd.a01) + 1e-3 * std::sqrt(dt));
        EXPECT_NEAR(sm.h.v1 / dt, bd.h1, 20.0 * dt * std::abs(bd.h1) + 1e-3 * std::sqrt(dt));
    }
}

TEST(StepMoments, MatchMonteCarloStep) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    GopCache cache(gop);
    const CallablePrice f([](const StatePoint& p) { return std::max(p.sh1 - 1.0, 0.0) + p.x * p.sh0; });
    const StatePoint p{0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
    const double dt = 0.05;
    const StepMoments sm = step_moments(gop, cache, f, p, dt, gauss_hermite(40), 4);
    // simulate the same step
    ScenarioConfig one = c;
    one.grid = TimeGrid{dt, 1};
    one.model.prior = XPrior{};
    PathBundle b = simulate_paths(one.model, one.grid, 200000, 3);
    simulate_gop_and_benchmark(b, gop);
    const auto n = static_cast<std::size_t>(b.n_paths);
    auto at = [&](std::size_t i) {
        const int pi = static_cast<int>(i);
        return StatePoint{dt, b.x[b.node(pi, 1)], b.s0[b.node(pi, 1)], b.s1[b.node(pi, 1)], b.s0hat[b.node(pi, 1)],
                          b.s1hat[b.node(pi, 1)]};
    };
    const MeanSe a11 = mean_se(n, [&](std::size_t i) { return std::pow(at(i).sh1 - 1.0, 2); });
    const MeanSe h1 = mean_se(n, [&](std::size_t i) { return (at(i).sh1 - 1.0) * (f.value(at(i)) - sm.g); });
    const MeanSe h0 = mean_se(n, [&](std::size_t i) { return (at(i).sh0 - 1.0) * (f.value(at(i)) - sm.g); });
    EXPECT_LE(std::abs(a11.mean - sm.a.a11), 4.0 * a11.se);
    EXPECT_LE(std::abs(h1.mean - sm.h.v1), 4.0 * h1.se);
    EXPECT_LE(std::abs(h0.mean - sm.h.v0), 4.0 * h0.se);
}

TEST(HedgeRun, IdentityClaimReplicates) {
    ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    c.claim = Claim{};
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 300, 5);
    simulate_gop_and_benchmark(b, gop);
    const CallablePrice f([](const StatePoint& p) { return p.sh1; });
    for (Brackets br : {Brackets::continuous, Brackets::one_step}) {
        HedgeConfig hc;
        hc.brackets = br;
        const HedgeRun run = hedge_paths(b, gop, f, c.claim, hc);
        // delta is only unique up to the degenerate direction; the gains are what replicate
        double spread = 0.0;
        for (int p = 0; p < run.n_paths; ++p) {
            const double c1 = run.value[run.node(p, 1)] - run.gains[run.node(p, 1)];
            for (int i = 1; i <= run.n_steps; ++i)
                spread = std::max(spread, std::abs(run.value[run.node(p, i)] - run.gains[run.node(p, i)] - c1));
        }
        // one-step moments are exact on the grid; continuous brackets are off by O(dt) per step
        EXPECT_LE(spread, br == Brackets::one_step ? 1e-10 : 2e-2) << brackets_name(br);
        // V0 is the sample mean of the payoff, so the initial cost only carries sampling noise
        const MeanSe pay = mean_se(run.payoff.size(), [&](std::size_t i) { return run.payoff[i]; });
        EXPECT_EQ(run.h0, pay.mean);
        EXPECT_LE(std::abs(run.h0 - 1.0), 4.0 * pay.se);
    }
}

TEST(HedgeRun, ConstantClaimHasNoResidual) {
    const Pipeline pl("constant-claim", 500, 20);
    HedgeConfig hc;
    const HedgeRun run = hedge_paths(pl.paths, pl.gop, pl.surface, pl.cfg.claim, hc);
    const HedgeReport rep = hedge_report(run, pl.paths);
    EXPECT_EQ(rep.h0, 1.0);
    EXPECT_LE(rep.risk0.mean, 1e-28);
    for (const auto& o : rep.orthogonality) EXPECT_EQ(o.z, 0.0) << o.name;
    EXPECT_EQ(rep.replication_error, 0.0);
}

TEST(HedgeRun, FullSchemeDegeneracyAndReplication) {
    const Pipeline pl("jump-hidden-factor", 400, 500);
    HedgeConfig hc;
    hc.scheme = Observation::full;
    const HedgeRun run = hedge_paths(pl.paths, pl.gop, pl.surface, pl.cfg.claim, hc);
    EXPECT_EQ(run.max_full_partial_gap, 0.0);
    const HedgeReport rep = hedge_report(run, pl.paths);
    EXPECT_EQ(rep.replication_error, 0.0);
    EXPECT_LT(rep.risk0.mean, rep.risk0_zero.mean);
    for (int p = 0; p < run.n_paths; ++p) EXPECT_EQ(run.value[run.node(p, 0)], run.h0);
}

TEST(HedgeRun, PerturbationScalesGains) {
    const Pipeline pl("lognormal-call", 300, 500);
    HedgeConfig hc;
    const HedgeRun run = hedge_paths(pl.paths, pl.gop, pl.surface, pl.cfg.claim, hc);
    const HedgeReport r1 = hedge_report(run, pl.paths, 1.0);
    const HedgeReport r2 = hedge_report(run, pl.paths, 1.5);
    EXPECT_GT(r2.risk0.mean, r1.risk0.mean);
    EXPECT_EQ(r2.h0, r1.h0);
}
