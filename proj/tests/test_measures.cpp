#include <gtest/gtest.h>

#include <cmath>

#include "bhedge/config.hpp"
#include "bhedge/measures.hpp"

using namespace bhedge;

TEST(Density, ZeroTiltIsOne) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const PathBundle b = simulate_paths(c.model, c.grid, 100, 1);
    const DensityPaths d = girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {0.0, 0.0}));
    for (double l : d.L) EXPECT_EQ(l, 1.0);
    EXPECT_EQ(d.terminal.se, 0.0);
}

TEST(Density, ConstantTiltHasUnitMean) {
    const ScenarioConfig c = parse_config(fixture_json("lognormal-call"));
    const PathBundle b = simulate_paths(c.model, c.grid, 100000, 2);
    const DensityPaths d = girsanov_density_path(b, c.model, GirsanovSpec::constant(0.3, {}));
    EXPECT_LE(std::abs(d.terminal.mean - 1.0), 3.0 * d.terminal.se);
    EXPECT_GT(d.min_l, 0.0);
    // no jumps: L_T = exp(0.3 W_T - 0.045)
    for (int p = 0; p < 20; ++p) {
        double w = 0.0;
        for (int i = 0; i < c.grid.n_steps; ++i) w += b.dw[b.inc(p, i)];
        EXPECT_NEAR(d.at(p, c.grid.n_steps), std::exp(0.3 * w - 0.045), 1e-12);
    }
}

TEST(Density, JumpTiltMustKeepPositivity) {
    const ScenarioConfig c = parse_config(fixture_json("single-mark"));
    const PathBundle b = simulate_paths(c.model, c.grid, 200, 3);
    ASSERT_FALSE(b.jumps.empty());
    EXPECT_THROW(girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {-1.0})), InvalidTilt);
    EXPECT_THROW(girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {-1.5}), Exec::serial), InvalidTilt);
    EXPECT_NO_THROW(girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {-0.5})));
    EXPECT_THROW(girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {})), std::invalid_argument);
}

TEST(Density, GopTiltIsNumeraireRatio) {
    // under (-theta1, -psi) the density is S0hat_T / S0hat_0
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 200, 4);
    simulate_gop_and_benchmark(b, gop);
    const DensityPaths d = girsanov_density_path(b, c.model, GirsanovSpec::from_gop(gop));
    for (int p = 0; p < b.n_paths; ++p)
        for (int i = 0; i <= c.grid.n_steps; i += 10)
            EXPECT_NEAR(d.at(p, i) / (b.s0hat[b.node(p, i)] / b.s0hat[b.node(p, 0)]), 1.0, 1e-9);
}

TEST(Residual, Examples) {
    MarketModel m = parse_config(fixture_json("lognormal-call")).model;
    EXPECT_EQ(martingale_measure_residual(m, GirsanovSpec::constant(0.0, {}), 0.0, 0.0, 1.0), 0.0);
    m.b1 = Coefficient::constant(0.07);
    const GopSpec gop(m);
    const GirsanovSpec dual = GirsanovSpec::from_gop(gop);
    EXPECT_LE(std::abs(martingale_measure_residual(m, dual, 0.0, 0.0, 1.0)), 1e-10);
    const GirsanovSpec bumped = GirsanovSpec::from_gop(gop, 0.1);
    EXPECT_NEAR(martingale_measure_residual(m, bumped, 0.0, 0.0, 1.0), 0.02, 1e-12);
}

TEST(Residual, GopDualityOnEveryFixture) {
    for (const auto& name : fixture_names()) {
        const ScenarioConfig c = parse_config(fixture_json(name));
        const GopSpec gop(c.model);
        const GirsanovSpec dual = GirsanovSpec::from_gop(gop);
        for (const auto& pt : c.box.sample(1000, 29))
            EXPECT_LE(std::abs(martingale_measure_residual(c.model, dual, pt[0], pt[1], pt[2])), 1e-10) << name;
    }
}

TEST(Conditions, ConstantAndEmptyMeasure) {
    const ScenarioConfig c = parse_config(fixture_json("lognormal-call"));
    MarketModel m = c.model;
    m.b1 = Coefficient::constant(0.07);
    const MeasureConditions mc = measure_conditions_check(GopSpec(m), c.box);
    EXPECT_TRUE(mc.passed);
    EXPECT_NEAR(mc.sup_theta, 0.2, 1e-12);
    EXPECT_EQ(mc.sup_psi, 0.0);
    EXPECT_EQ(mc.nu_total, 0.0);
    EXPECT_TRUE(mc.warnings.empty());
    EXPECT_EQ(mc.n_points, 25);  // x axis is a single point
}

TEST(Conditions, PsiNearOneWarns) {
    // premium lambda K1 psi with K1 = 0.5: psi = 0.9998 as the premium nears lambda K1
    MarketModel m = parse_config(fixture_json("single-mark")).model;
    m.b1 = Coefficient::constant(m.r(0, 0) + 0.4999);
    const MeasureConditions mc = measure_conditions_check(GopSpec(m), StateBox{});
    EXPECT_GT(mc.sup_psi, 1.0 - 1e-3);
    EXPECT_LT(mc.sup_psi, 1.0);
    EXPECT_FALSE(mc.warnings.empty());
}

TEST(ReweightedDrift, GopTiltRemovesDrift) {
    const ScenarioConfig c = parse_config(fixture_json("single-mark"));
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 20000, 6);
    simulate_gop_and_benchmark(b, gop);
    const DensityPaths d = girsanov_density_path(b, c.model, GirsanovSpec::from_gop(gop));
    const MeanSe tilted = reweighted_drift(b, d);
    EXPECT_LE(std::abs(tilted.mean), 3.0 * tilted.se);
    const DensityPaths one = girsanov_density_path(b, c.model, GirsanovSpec::constant(0.0, {0.0}));
    const MeanSe raw = reweighted_drift(b, one);
    EXPECT_GT(raw.mean / raw.se, 3.0);
}
