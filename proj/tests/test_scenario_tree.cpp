#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "bhedge/config.hpp"
#include "bhedge/scenario_tree.hpp"

using namespace bhedge;

namespace {

struct TreeFixture {
    ScenarioConfig cfg = parse_config(fixture_json("tree-oracle"));
    GopSpec gop{cfg.model};
    ScenarioTree tree{gop, cfg.claim, cfg.grid.n_steps, cfg.grid.T};
};

} // namespace

TEST(ScenarioTree, BenchmarkedPricesAreMartingales) {
    const TreeFixture f;
    const auto& nodes = f.tree.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].depth == f.tree.n_steps()) continue;
        double m0 = 0.0, m1 = 0.0, pr = 0.0;
        for (int o = 0; o < 4; ++o) {
            const auto& c = nodes[static_cast<std::size_t>(f.tree.children(static_cast<int>(i))[static_cast<std::size_t>(o)])];
            const double q = f.tree.outcome_prob(o);
            pr += q;
            m0 += q * c.sh0;
            m1 += q * c.sh1;
            EXPECT_GT(c.sh0, 0.0);
            EXPECT_GT(c.sh1, 0.0);
        }
        EXPECT_NEAR(pr, 1.0, 1e-15);
        EXPECT_NEAR(m0, nodes[i].sh0, 1e-14);
        EXPECT_NEAR(m1, nodes[i].sh1, 1e-14);
    }
}

TEST(ScenarioTree, ProbabilitiesAndValues) {
    const TreeFixture f;
    double total = 0.0;
    for (const auto& h : f.tree.hnodes())
        if (h.depth == f.tree.n_steps()) total += h.prob;
    EXPECT_NEAR(total, 1.0, 1e-14);
    // stored recursion agrees with the standalone one
    for (const auto& nd : f.tree.nodes()) {
        if (nd.depth > 1) continue;
        const ScenarioTree::Local l = f.tree.local(nd.depth, nd.x, nd.sh0, nd.sh1);
        EXPECT_NEAR(l.g, nd.local.g, 1e-14);
        EXPECT_NEAR(l.delta_f.v1, nd.local.delta_f.v1, 1e-12);
    }
    EXPECT_GT(f.tree.h0(), 0.0);
}

TEST(ScenarioTree, PartialStrategyMatchesLeastSquares) {
    // delta^H minimizes the probability-weighted squared one-step hedge error
    // over every node in the observation class
    const TreeFixture f;
    const auto& nodes = f.tree.nodes();
    int checked = 0;
    for (const auto& h : f.tree.hnodes()) {
        if (h.depth == f.tree.n_steps()) continue;
        const Eigen::Index rows = static_cast<Eigen::Index>(4 * h.members.size());
        Eigen::MatrixXd A(rows, 2);
        Eigen::VectorXd y(rows);
        Eigen::Index r = 0;
        for (int ni : h.members) {
            const auto& nd = nodes[static_cast<std::size_t>(ni)];
            for (int o = 0; o < 4; ++o, ++r) {
                const auto& c = nodes[static_cast<std::size_t>(f.tree.children(ni)[static_cast<std::size_t>(o)])];
                const double w = std::sqrt(nd.prob / h.prob * f.tree.outcome_prob(o));
                A(r, 0) = w * (c.sh0 - nd.sh0);
                A(r, 1) = w * (c.sh1 - nd.sh1);
                y(r) = w * (c.local.g - h.pg);
            }
        }
        // minimum-norm solution; a singular-value ratio below 1e-7 is a
        // determinant ratio below 1e-14 for the normal matrix
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        svd.setThreshold(1e-7);
        const Eigen::Vector2d d = svd.solve(y);
        EXPECT_EQ(h.singular, svd.rank() < 2) << h.depth;
        const double scale = std::max(1.0, d.norm());
        EXPECT_NEAR(h.delta_h.v0, d(0), 1e-10 * scale) << h.depth;
        EXPECT_NEAR(h.delta_h.v1, d(1), 1e-10 * scale) << h.depth;
        ++checked;
    }
    EXPECT_GT(checked, 1);
}

TEST(ScenarioTree, RevealedStateGivesFullInformationStrategy) {
    const TreeFixture f;
    int single = 0;
    for (const auto& h : f.tree.hnodes()) {
        if (h.depth == f.tree.n_steps() || h.members.size() != 1) continue;
        const auto& nd = f.tree.nodes()[static_cast<std::size_t>(h.members[0])];
        EXPECT_NEAR(h.delta_h.v0, nd.local.delta_f.v0, 1e-12);
        EXPECT_NEAR(h.delta_h.v1, nd.local.delta_f.v1, 1e-12);
        ++single;
    }
    EXPECT_GT(single, 0);
    // the root class mixes both prior states
    EXPECT_EQ(f.tree.hnodes()[0].members.size(), 2u);
}

TEST(ScenarioTree, RejectsUnsupportedModels) {
    const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    const GopSpec gop(c.model);
    EXPECT_THROW(ScenarioTree(gop, c.claim, 3, 1.0), std::invalid_argument);
    const TreeFixture f;
    EXPECT_THROW(ScenarioTree(f.gop, f.cfg.claim, 9, 1.0), std::invalid_argument);
}
