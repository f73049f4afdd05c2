#include <gtest/gtest.h>

#include <omp.h>

#include "bhedge/config.hpp"
#include "bhedge/filtering.hpp"
#include "bhedge/measures.hpp"

using namespace bhedge;

// Every OpenMP kernel must reproduce its serial reference bit for bit,
// whatever the thread count.
class SerialParallel : public ::testing::Test {
protected:
    void SetUp() override {
        saved_ = omp_get_max_threads();
        omp_set_num_threads(3);
    }
    void TearDown() override { omp_set_num_threads(saved_); }

    int saved_ = 1;
};

TEST_F(SerialParallel, SimulationAndBenchmark) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    PathBundle s = simulate_paths(c.model, c.grid, 257, 3, Exec::serial);
    PathBundle p = simulate_paths(c.model, c.grid, 257, 3, Exec::parallel);
    EXPECT_EQ(s.x, p.x);
    EXPECT_EQ(s.s1, p.s1);
    EXPECT_EQ(s.dw, p.dw);
    EXPECT_EQ(s.jump_begin, p.jump_begin);
    simulate_gop_and_benchmark(s, gop, Exec::serial);
    simulate_gop_and_benchmark(p, gop, Exec::parallel);
    EXPECT_EQ(s.gop, p.gop);
    EXPECT_EQ(s.s0hat, p.s0hat);
    EXPECT_EQ(s.s1hat, p.s1hat);
    const DriftStats ds = martingale_drift_check(s, Benchmarked::s1hat, Exec::serial);
    const DriftStats dp = martingale_drift_check(p, Benchmarked::s1hat, Exec::parallel);
    EXPECT_EQ(ds.max_abs_z, dp.max_abs_z);
    EXPECT_EQ(ds.terminal.mean, dp.terminal.mean);
}

TEST_F(SerialParallel, PriceSurface) {
    ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    c.surface.n_paths = 64;
    c.surface.axes.t = {0.0, 0.5, 1.0};
    c.surface.axes.sh1 = {0.8, 1.0, 1.2};
    const GopSpec gop(c.model);
    const PriceSurface s = estimate_price_function(gop, c.claim, c.grid, c.surface, Exec::serial);
    const PriceSurface p = estimate_price_function(gop, c.claim, c.grid, c.surface, Exec::parallel);
    EXPECT_EQ(s.values(), p.values());
    EXPECT_EQ(s.std_errors(), p.std_errors());
}

TEST_F(SerialParallel, HedgeFilterDensity) {
    ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    c.surface.n_paths = 50;
    const GopSpec gop(c.model);
    PathBundle b = simulate_paths(c.model, c.grid, 97, 8);
    simulate_gop_and_benchmark(b, gop);
    const PriceSurface g = estimate_price_function(gop, c.claim, c.grid, c.surface);
    for (Observation scheme : {Observation::full, Observation::prices}) {
        HedgeConfig hc;
        hc.scheme = scheme;
        const HedgeRun s = hedge_paths(b, gop, g, c.claim, hc, Exec::serial);
        const HedgeRun p = hedge_paths(b, gop, g, c.claim, hc, Exec::parallel);
        EXPECT_EQ(s.delta0, p.delta0);
        EXPECT_EQ(s.delta1, p.delta1);
        EXPECT_EQ(s.value, p.value);
        EXPECT_EQ(s.post_mean, p.post_mean);
    }
    const FilterTrajectories fs = filter_paths(b, gop, c.filter, 5, Exec::serial);
    const FilterTrajectories fp = filter_paths(b, gop, c.filter, 5, Exec::parallel);
    EXPECT_EQ(fs.mean, fp.mean);
    EXPECT_EQ(fs.ess, fp.ess);
    const DensityPaths ds = girsanov_density_path(b, c.model, GirsanovSpec::from_gop(gop), Exec::serial);
    const DensityPaths dp = girsanov_density_path(b, c.model, GirsanovSpec::from_gop(gop), Exec::parallel);
    EXPECT_EQ(ds.L, dp.L);
}

TEST_F(SerialParallel, SampledFilter) {
    // resampling draws are keyed by path and step, not by thread
    ScenarioConfig c = parse_config(fixture_json("tree-oracle"));
    c.model.prior.kind = XPrior::Kind::gaussian;
    c.model.prior.mean = 0.5;
    c.model.prior.sd = 0.3;
    c.model.k1 = {Coefficient::constant(-0.1)};  // an x-dependent jump size would pin x exactly
    c.grid.n_steps = 20;
    const GopSpec gop(c.model);
    // prices only: the numeraire's value would reveal x through its x-dependent fraction
    const PathBundle b = simulate_paths(c.model, c.grid, 31, 2);
    FilterSettings fset;
    fset.n_particles = 200;
    const FilterTrajectories fs = filter_paths(b, gop, fset, 9, Exec::serial);
    const FilterTrajectories fp = filter_paths(b, gop, fset, 9, Exec::parallel);
    EXPECT_EQ(fs.mean, fp.mean);
    EXPECT_EQ(fs.resamples, fp.resamples);
}
