#pragma once

#include <array>
#include <vector>

#include "bhedge/hedging.hpp"

namespace bhedge {

// Finite tree on the benchmarked prices: per step a binomial W move
// (eps = +-1, prob 1/2) and an independent Bernoulli jump of the single mark
// (prob 1 - exp(-lambda dt)). Per-step factors are mean one given the state,
// so S^hat is an exact martingale on the tree. X moves only by K0 at jumps.
class ScenarioTree {
public:
    struct Local {
        double g = 0.0;
        Sym2 a;        // E[dS dS^T | state], per step
        Vec2 h;        // E[dS dg | state]
        Vec2 delta_f;  // a^+ h
    };

    struct Node {
        int depth = 0;
        int parent = -1;
        int outcome = -1;
        double x = 0.0, sh0 = 1.0, sh1 = 1.0;
        double prob = 0.0;  // prior times outcome probabilities
        int hnode = -1;
        Local local;
    };

    // Observation-history class: all nodes sharing the same price history.
    struct HNode {
        int depth = 0;
        int parent = -1;
        double f0 = 1.0, f1 = 1.0;  // last observed factors
        std::vector<int> members;
        double prob = 0.0;
        Sym2 pa;
        Vec2 ph;
        double pg = 0.0;
        Vec2 delta_h;
        bool singular = false;
    };

    ScenarioTree(const GopSpec& gop, const Claim& claim, int n_steps, double T);

    int n_steps() const { return n_; }
    double dt() const { return dt_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<HNode>& hnodes() const { return hnodes_; }
    const std::array<int, 4>& children(int node) const { return children_[static_cast<std::size_t>(node)]; }
    double h0() const { return h0_; }

    // outcome o: eps = (o & 1) ? +1 : -1, jump = o >> 1
    static int eps(int o) { return (o & 1) ? 1 : -1; }
    static int jump(int o) { return o >> 1; }
    double outcome_prob(int o) const;
    Vec2 factors(int depth, double x, int o) const;
    double next_x(int depth, double x, int o) const;
    // backward recursion from an arbitrary state
    Local local(int depth, double x, double sh0, double sh1) const;

private:
    double value(int depth, double x, double sh0, double sh1) const;

    const GopSpec* gop_;
    Claim claim_;
    int n_ = 0;
    double dt_ = 0.0, p_jump_ = 0.0;
    std::vector<Node> nodes_;
    std::vector<HNode> hnodes_;
    std::vector<std::array<int, 4>> children_;
    double h0_ = 0.0;
};

} // namespace bhedge
