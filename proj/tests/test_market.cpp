#include <gtest/gtest.h>

#include <cmath>

#include "bhedge/config.hpp"
#include "bhedge/market.hpp"

using namespace bhedge;

namespace {

MarketModel lognormal() { return parse_config(fixture_json("lognormal-call")).model; }

} // namespace

TEST(Coefficient, FormsEvaluate) {
    EXPECT_DOUBLE_EQ(Coefficient::constant(0.3)(0.5, 2.0, 7.0), 0.3);
    EXPECT_DOUBLE_EQ(Coefficient::affine(0.1, 0.2, 0.3, 0.4)(1.0, 2.0, 3.0), 0.1 + 0.4 + 0.9 + 0.4);
    const Coefficient mr = Coefficient::mean_reverting(2.0, 0.5);
    EXPECT_DOUBLE_EQ(mr(0.0, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(mr(0.0, 0.5), 0.0);
    EXPECT_TRUE(mr.uses_x());
    EXPECT_FALSE(mr.uses_s1());
}

TEST(JumpMeasure, RejectsMalformed) {
    JumpMeasure m;
    m.marks = {0.1, 0.2};
    m.intensities = {1.0};
    EXPECT_THROW(check_measure(m), MalformedMeasure);
    m.intensities = {1.0, -0.5};
    EXPECT_THROW(check_measure(m), MalformedMeasure);
    m.intensities = {1.0, 0.5};
    EXPECT_NO_THROW(check_measure(m));
    EXPECT_DOUBLE_EQ(m.total_intensity(), 1.5);
    JumpMeasure empty;
    EXPECT_NO_THROW(check_measure(empty));
    EXPECT_EQ(empty.total_intensity(), 0.0);
}

TEST(Validate, FlagsPositivityAndCorrelation) {
    MarketModel m = lognormal();
    m.jumps.marks = {0.0};
    m.jumps.intensities = {1.0};
    m.k0 = {Coefficient::constant(0.0)};
    m.k1 = {Coefficient::constant(-1.2)};
    StateBox box;
    ValidationReport rep = validate_model(m, box);
    ASSERT_FALSE(rep.passed());
    EXPECT_NE(rep.violations.front().condition.find("positivity"), std::string::npos);

    m.k1 = {Coefficient::constant(-0.5)};
    m.rho = 1.5;
    rep = validate_model(m, box);
    ASSERT_EQ(rep.violations.size(), 1u);
    EXPECT_NE(rep.violations.front().condition.find("rho"), std::string::npos);
}

TEST(Validate, AllFixturesClean) {
    for (const auto& name : fixture_names()) {
        const ScenarioConfig c = parse_config(fixture_json(name));
        EXPECT_TRUE(validate_model(c.model, c.box).passed()) << name;
    }
}

TEST(Simulate, BankAccountIsExact) {
    const MarketModel m = lognormal();
    const TimeGrid grid{1.0, 50};
    const PathBundle b = simulate_paths(m, grid, 20, 3);
    for (int p = 0; p < b.n_paths; ++p)
        for (int i = 0; i <= grid.n_steps; ++i) {
            EXPECT_NEAR(b.s0[b.node(p, i)], std::exp(0.03 * grid.t(i)), 1e-14);
            EXPECT_GT(b.s1[b.node(p, i)], 0.0);
        }
}

TEST(Simulate, SameSeedSameNumbers) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const PathBundle a = simulate_paths(c.model, c.grid, 64, 11);
    const PathBundle b = simulate_paths(c.model, c.grid, 64, 11);
    const PathBundle d = simulate_paths(c.model, c.grid, 64, 12);
    EXPECT_EQ(a.s1, b.s1);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.jumps.size(), b.jumps.size());
    EXPECT_NE(a.s1, d.s1);
}

TEST(Simulate, PrefixOfLargerRunIsIdentical) {
    // streams are keyed per path, so path p does not depend on n_paths
    const ScenarioConfig c = parse_config(fixture_json("single-mark"));
    const PathBundle small = simulate_paths(c.model, c.grid, 10, 5);
    const PathBundle big = simulate_paths(c.model, c.grid, 40, 5);
    for (int p = 0; p < 10; ++p)
        for (int i = 0; i <= c.grid.n_steps; ++i) EXPECT_EQ(small.s1[small.node(p, i)], big.s1[big.node(p, i)]);
}

TEST(Simulate, JumpBookkeeping) {
    const ScenarioConfig c = parse_config(fixture_json("single-mark"));
    const PathBundle b = simulate_paths(c.model, c.grid, 500, 9);
    ASSERT_EQ(b.jump_begin.size(), 501u);
    EXPECT_EQ(b.jump_begin.back(), b.jumps.size());
    // sigma1 = 0: S1 moves by drift between jumps and by exactly 1.5x at each
    for (int p = 0; p < 50; ++p) {
        auto js = b.path_jumps(p);
        for (const auto& e : js) {
            EXPECT_EQ(e.mark, 0);
            EXPECT_DOUBLE_EQ(e.k1, 0.5);
        }
    }
    // mean number of jumps ~ lambda T = 1
    const double mean_jumps = static_cast<double>(b.jumps.size()) / 500.0;
    EXPECT_NEAR(mean_jumps, 1.0, 4.0 * std::sqrt(1.0 / 500.0));
}

TEST(Simulate, RejectsBadGrid) {
    const MarketModel m = lognormal();
    EXPECT_THROW(simulate_paths(m, TimeGrid{1.0, 0}, 10, 1), std::invalid_argument);
    EXPECT_THROW(simulate_paths(m, TimeGrid{1.0, 10}, 0, 1), std::invalid_argument);
}

TEST(Simulate, WeakErrorShrinksWithStep) {
    // E[S1_T] = s1_0 exp(b1 T) for the affine-drift fixture; compare two grids
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const int n = 100000;
    const PathBundle coarse = simulate_paths(c.model, TimeGrid{1.0, 100}, n, 21);
    const PathBundle fine = simulate_paths(c.model, TimeGrid{1.0, 200}, n, 21);
    auto terminal = [&](const PathBundle& b) {
        return mean_se(static_cast<std::size_t>(n), [&](std::size_t p) {
            return b.s1[b.node(static_cast<int>(p), b.grid.n_steps)];
        });
    };
    const MeanSe a = terminal(coarse), f = terminal(fine);
    EXPECT_LE(std::abs(a.mean - f.mean), 3.0 * std::hypot(a.se, f.se));
}

TEST(StateBox, PointsCoverCorners) {
    StateBox box;
    box.x_lo = -1.0;
    box.x_hi = 1.0;
    box.s1_lo = 0.5;
    box.s1_hi = 2.0;
    box.n_per_axis = 3;
    const auto pts = box.points();
    EXPECT_EQ(pts.size(), 27u);
    EXPECT_DOUBLE_EQ(pts.front()[1], -1.0);
    EXPECT_DOUBLE_EQ(pts.back()[2], 2.0);
    const auto s = box.sample(100, 4);
    EXPECT_EQ(s, box.sample(100, 4));
    for (const auto& p : s) {
        EXPECT_GE(p[1], -1.0);
        EXPECT_LE(p[2], 2.0);
    }
}
