#include <gtest/gtest.h>

#include <cmath>

#include "bhedge/config.hpp"
#include "bhedge/filtering.hpp"

using namespace bhedge;

namespace {

XPrior two_point() {
    XPrior p;
    p.kind = XPrior::Kind::discrete;
    p.values = {0.0, 1.0};
    p.probs = {0.5, 0.5};
    return p;
}

// sigma1 = 0.2, no jumps, r = 0, return drift b1(x) = 0.1 x
MarketModel drift_model() {
    MarketModel m = parse_config(fixture_json("lognormal-call")).model;
    m.r = Coefficient::constant(0.0);
    m.b1 = Coefficient::affine(0.0, 0.1);
    m.prior = two_point();
    return m;
}

ObservationStep unit_step(double log_return) {
    ObservationStep o;
    o.dt = 1.0;
    o.log_return = log_return;
    return o;
}

} // namespace

TEST(InitFilter, PriorKinds) {
    XPrior dirac;
    ParticleFilter pf = init_filter(dirac, 0.3, 0, 1);
    ASSERT_EQ(pf.size(), 1u);
    EXPECT_EQ(pf.particles[0], 0.3);
    EXPECT_TRUE(pf.enumerating);

    pf = init_filter(two_point(), 0.0, 0, 1);
    EXPECT_EQ(pf.particles, (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(pf.weights, (std::vector<double>{0.5, 0.5}));
    EXPECT_TRUE(pf.enumerating);

    XPrior g;
    g.kind = XPrior::Kind::gaussian;
    g.mean = 1.0;
    g.sd = 0.5;
    const ParticleFilter a = init_filter(g, 0.0, 500, 9, 3), b = init_filter(g, 0.0, 500, 9, 3),
                         c = init_filter(g, 0.0, 500, 9, 4);
    EXPECT_EQ(a.particles, b.particles);
    EXPECT_NE(a.particles, c.particles);
    EXPECT_FALSE(a.enumerating);
    EXPECT_NEAR(a.mean(), 1.0, 4.0 * 0.5 / std::sqrt(500.0));

    XPrior empty;
    empty.kind = XPrior::Kind::discrete;
    EXPECT_THROW(init_filter(empty, 0.0, 0, 1), std::invalid_argument);
}

TEST(FilterStep, TwoParticleBayes) {
    const GopSpec gop(drift_model());
    ParticleFilter pf = init_filter(two_point(), 0.0, 0, 1);
    // return means are (b1 - sigma^2/2) dt = (-0.02, 0.08), so residuals (0.1, 0)
    filter_step(pf, gop, unit_step(0.08));
    const double e = std::exp(-0.125);
    EXPECT_NEAR(pf.weights[0], e / (1.0 + e), 1e-12);
    EXPECT_NEAR(pf.weights[1], 1.0 / (1.0 + e), 1e-12);
    EXPECT_NEAR(pf.weights[0], 0.4688, 1e-4);
    EXPECT_EQ(pf.particles, (std::vector<double>{0.0, 1.0}));
}

TEST(FilterStep, UninformativeObservationKeepsWeights) {
    MarketModel m = drift_model();
    m.b1 = Coefficient::constant(0.05);
    const GopSpec gop(m);
    ParticleFilter pf = init_filter(two_point(), 0.0, 0, 1);
    for (double r : {-0.3, 0.0, 0.2}) {
        filter_step(pf, gop, unit_step(r));
        EXPECT_NEAR(pf.weights[0], 0.5, 1e-15);
        EXPECT_NEAR(pf.weights[1], 0.5, 1e-15);
    }
}

TEST(FilterStep, InconsistentBankAccountIsDegenerate) {
    const GopSpec gop(drift_model());
    ParticleFilter pf = init_filter(two_point(), 0.0, 0, 1);
    ObservationStep o = unit_step(0.0);
    o.s0_log_increment = 0.05;  // r = 0 for every particle
    EXPECT_THROW(filter_step(pf, gop, o), FilterDegeneracy);
    EXPECT_EQ(pf.particles, (std::vector<double>{0.0, 1.0}));
}

TEST(JumpUpdate, SingleMarkMovesEveryParticle) {
    MarketModel m = parse_config(fixture_json("single-mark")).model;
    m.k0 = {Coefficient::constant(0.25)};
    m.prior = two_point();
    const GopSpec gop(m);
    ParticleFilter pf = init_filter(m.prior, 0.0, 0, 1);
    ObservationStep o = unit_step(0.0);
    o.n_jumps = 1;
    o.jump_size[0] = 0.5;
    o.jump_s1_pre[0] = 1.0;
    jump_update(pf, gop, o, 0);
    EXPECT_EQ(pf.weights, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(pf.particles, (std::vector<double>{0.25, 1.25}));
}

TEST(JumpUpdate, OnlyCompatibleParticlesSurvive) {
    MarketModel m = drift_model();
    m.jumps.marks = {0.0};
    m.jumps.intensities = {1.0};
    m.k0 = {Coefficient::constant(0.0)};
    m.k1 = {Coefficient::affine(0.1, 0.1)};  // 0.1 at x = 0, 0.2 at x = 1
    const GopSpec gop(m);
    ObservationStep o = unit_step(0.0);
    o.n_jumps = 1;
    o.jump_s1_pre[0] = 1.0;

    ParticleFilter pf = init_filter(two_point(), 0.0, 0, 1);
    o.jump_size[0] = 0.2;
    jump_update(pf, gop, o, 0);
    EXPECT_EQ(pf.weights, (std::vector<double>{0.0, 1.0}));

    pf = init_filter(two_point(), 0.0, 0, 1);
    o.jump_size[0] = 0.3;
    EXPECT_THROW(jump_update(pf, gop, o, 0), FilterDegeneracy);
    EXPECT_EQ(pf.weights, (std::vector<double>{0.5, 0.5}));
}

TEST(Observe, InvisibleMarksAreNotReported) {
    // the factor mark has K1 = 0 at x = 0
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 300, 17);
    simulate_gop_and_benchmark(b, gop);
    int invisible = 0;
    for (int p = 0; p < b.n_paths; ++p) {
        std::vector<int> seen(static_cast<std::size_t>(c.grid.n_steps), 0);
        for (const auto& e : b.path_jumps(p)) {
            if (e.k1 == 0.0) ++invisible;
            else ++seen[static_cast<std::size_t>(e.step)];
        }
        for (int i = 0; i < c.grid.n_steps; ++i) {
            const ObservationStep o = observe(b, gop, p, i);
            ASSERT_EQ(o.n_jumps, seen[static_cast<std::size_t>(i)]);
            for (int j = 0; j < o.n_jumps; ++j) EXPECT_NE(o.jump_size[static_cast<std::size_t>(j)], 0.0);
        }
    }
    EXPECT_GT(invisible, 0);
}

TEST(Project, EnumerationToy) {
    ParticleFilter pf = init_filter(two_point(), 0.0, 0, 1);
    const auto a = [](double x) { return x == 0.0 ? 0.04 : 0.16; };
    const auto df = [](double x) { return x == 0.0 ? 1.0 : 2.0; };
    EXPECT_NEAR(project(pf, a), 0.10, 1e-15);
    EXPECT_NEAR(project(pf, [&](double x) { return a(x) * df(x); }), 0.18, 1e-15);
    EXPECT_NEAR(particle_se(pf, a), 0.5 * std::hypot(0.06, 0.06), 1e-15);
}

TEST(Resample, TriggersBelowThreshold) {
    XPrior g;
    g.kind = XPrior::Kind::gaussian;
    g.sd = 1.0;
    ParticleFilter pf = init_filter(g, 0.0, 1000, 5);
    reweight(pf, [](double x) { return std::exp(-50.0 * (x - 1.0) * (x - 1.0)); });
    EXPECT_EQ(pf.resamples, 1);
    for (double w : pf.weights) EXPECT_EQ(w, 1e-3);
    EXPECT_NEAR(pf.mean(), 1.0, 0.1);

    ParticleFilter flat = init_filter(g, 0.0, 1000, 5);
    reweight(flat, [](double) { return 2.0; });
    EXPECT_EQ(flat.resamples, 0);

    // enumerating filters keep exact weights
    ParticleFilter e = init_filter(two_point(), 0.0, 0, 1);
    reweight(e, [](double x) { return x == 0.0 ? 1e-6 : 1.0; });
    EXPECT_EQ(e.resamples, 0);
    EXPECT_NEAR(e.weights[0], 1e-6 / (1.0 + 1e-6), 1e-18);
}

TEST(FilterPaths, HiddenFactorIsCalibrated) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 2000, 23);
    simulate_gop_and_benchmark(b, gop);
    const FilterTrajectories ft = filter_paths(b, gop, c.filter, 3);
    EXPECT_LE(ft.max_weight_error, 1e-12);
    EXPECT_EQ(ft.resamples, 0);
    for (double e : ft.ess) {
        EXPECT_GE(e, 1.0 - 1e-12);
        EXPECT_LE(e, 2.0 + 1e-12);
    }
    // the posterior mean is an unbiased forecast of the hidden state
    for (int i : {10, 50, 100}) {
        const MeanSe d = mean_se(static_cast<std::size_t>(b.n_paths), [&](std::size_t p) {
            const std::size_t n = b.node(static_cast<int>(p), i);
            return b.x[n] - ft.mean[n];
        });
        EXPECT_LE(std::abs(d.mean), 4.0 * d.se) << i;
    }
    // and it beats the prior
    double mse_post = 0.0, mse_prior = 0.0;
    for (int p = 0; p < b.n_paths; ++p) {
        const std::size_t n = b.node(p, c.grid.n_steps);
        mse_post += std::pow(b.x[n] - ft.mean[n], 2);
        mse_prior += std::pow(b.x[n] - 0.5, 2);
    }
    EXPECT_LT(mse_post, 0.8 * mse_prior);
}
