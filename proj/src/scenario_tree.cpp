#include "bhedge/scenario_tree.hpp"

#include <cmath>
#include <stdexcept>

namespace bhedge {

ScenarioTree::ScenarioTree(const GopSpec& gop, const Claim& claim, int n_steps, double T)
    : gop_(&gop), claim_(claim), n_(n_steps), dt_(T / n_steps) {
    const MarketModel& m = gop.model();
    if (m.n_marks() != 1) throw std::invalid_argument("scenario tree needs exactly one jump mark");
    if (gop.depends_on_s1() || gop.depends_on_t() || m.k0[0].uses_t())
        throw std::invalid_argument("scenario tree needs coefficients independent of t and s1");
    if (n_steps < 1 || n_steps > 8) throw std::invalid_argument("scenario tree depth must be in [1, 8]");
    p_jump_ = -std::expm1(-m.lambda(0) * dt_);

    std::vector<double> xs{m.x0}, ps{1.0};
    if (m.prior.kind == XPrior::Kind::discrete) {
        xs = m.prior.values;
        ps = m.prior.probs;
    } else if (m.prior.kind == XPrior::Kind::gaussian) {
        throw std::invalid_argument("scenario tree needs a finite prior");
    }

    HNode root_h;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Node r;
        r.x = xs[i];
        r.sh0 = 1.0;
        r.sh1 = m.s1_0;
        r.prob = ps[i];
        r.hnode = 0;
        root_h.members.push_back(static_cast<int>(nodes_.size()));
        nodes_.push_back(r);
        children_.push_back({-1, -1, -1, -1});
    }
    hnodes_.push_back(root_h);

    // forward: nodes and observation classes, level by level
    std::size_t level_h_begin = 0;
    for (int d = 0; d < n_; ++d) {
        const std::size_t level_h_end = hnodes_.size();
        for (std::size_t hi = level_h_begin; hi < level_h_end; ++hi) {
            const std::size_t first_child_h = hnodes_.size();
            const std::vector<int> members = hnodes_[hi].members;
            for (int ni : members) {
                for (int o = 0; o < 4; ++o) {
                    const Node par = nodes_[static_cast<std::size_t>(ni)];
                    const Vec2 f = factors(d, par.x, o);
                    Node c;
                    c.depth = d + 1;
                    c.parent = ni;
                    c.outcome = o;
                    c.x = next_x(d, par.x, o);
                    c.sh0 = par.sh0 * f.v0;
                    c.sh1 = par.sh1 * f.v1;
                    c.prob = par.prob * outcome_prob(o);
                    int hj = -1;
                    for (std::size_t k = first_child_h; k < hnodes_.size(); ++k) {
                        const HNode& h = hnodes_[k];
                        if (std::abs(h.f0 - f.v0) <= 1e-12 && std::abs(h.f1 - f.v1) <= 1e-12) {
                            hj = static_cast<int>(k);
                            break;
                        }
                    }
                    if (hj < 0) {
                        HNode h;
                        h.depth = d + 1;
                        h.parent = static_cast<int>(hi);
                        h.f0 = f.v0;
                        h.f1 = f.v1;
                        hj = static_cast<int>(hnodes_.size());
                        hnodes_.push_back(h);
                    }
                    c.hnode = hj;
                    const int id = static_cast<int>(nodes_.size());
                    hnodes_[static_cast<std::size_t>(hj)].members.push_back(id);
                    children_[static_cast<std::size_t>(ni)][static_cast<std::size_t>(o)] = id;
                    nodes_.push_back(c);
                    children_.push_back({-1, -1, -1, -1});
                }
            }
        }
        level_h_begin = level_h_end;
    }

    // backward: values, brackets, full-information strategies
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& nd = nodes_[i];
        if (nd.depth == n_) {
            nd.local.g = claim_.payoff(nd.sh0, nd.sh1);
            continue;
        }
        Local& L = nd.local;
        for (int o = 0; o < 4; ++o) {
            const Node& c = nodes_[static_cast<std::size_t>(children_[i][static_cast<std::size_t>(o)])];
            L.g += outcome_prob(o) * c.local.g;
        }
        for (int o = 0; o < 4; ++o) {
            const Node& c = nodes_[static_cast<std::size_t>(children_[i][static_cast<std::size_t>(o)])];
            const double q = outcome_prob(o);
            const double d0 = c.sh0 - nd.sh0, d1 = c.sh1 - nd.sh1, dg = c.local.g - L.g;
            L.a.a00 += q * d0 * d0;
            L.a.a01 += q * d0 * d1;
            L.a.a11 += q * d1 * d1;
            L.h.v0 += q * d0 * dg;
            L.h.v1 += q * d1 * dg;
        }
        L.delta_f = solve_sym2(L.a, L.h).x;
    }

    for (auto& h : hnodes_) {
        for (int ni : h.members) h.prob += nodes_[static_cast<std::size_t>(ni)].prob;
        for (int ni : h.members) {
            const Node& nd = nodes_[static_cast<std::size_t>(ni)];
            const double w = nd.prob / h.prob;
            h.pa.a00 += w * nd.local.a.a00;
            h.pa.a01 += w * nd.local.a.a01;
            h.pa.a11 += w * nd.local.a.a11;
            h.ph.v0 += w * nd.local.h.v0;
            h.ph.v1 += w * nd.local.h.v1;
            h.pg += w * nd.local.g;
        }
        if (h.depth < n_) {
            const StrategyResult s = partial_info_strategy(h.pa, h.ph);
            h.delta_h = s.delta;
            h.singular = s.singular;
        }
    }
    h0_ = hnodes_[0].pg;
}

double ScenarioTree::outcome_prob(int o) const { return 0.5 * (jump(o) ? p_jump_ : 1.0 - p_jump_); }

Vec2 ScenarioTree::factors(int depth, double x, int o) const {
    const MarketModel& m = gop_->model();
    const GopState g = gop_->at(depth * dt_, x, m.s1_0);
    const double e = eps(o) * std::sqrt(dt_);
    const double j = jump(o) - p_jump_;
    return {1.0 - g.theta1 * e - g.psi[0] * j, 1.0 + (g.sigma1 - g.theta1) * e + g.k_theta[0] * j};
}

double ScenarioTree::next_x(int depth, double x, int o) const {
    return jump(o) ? x + gop_->model().k0[0](depth * dt_, x) : x;
}

double ScenarioTree::value(int depth, double x, double sh0, double sh1) const {
    if (depth == n_) return claim_.payoff(sh0, sh1);
    double v = 0.0;
    for (int o = 0; o < 4; ++o) {
        const Vec2 f = factors(depth, x, o);
        v += outcome_prob(o) * value(depth + 1, next_x(depth, x, o), sh0 * f.v0, sh1 * f.v1);
    }
    return v;
}

ScenarioTree::Local ScenarioTree::local(int depth, double x, double sh0, double sh1) const {
    Local L;
    L.g = value(depth, x, sh0, sh1);
    if (depth == n_) return L;
    for (int o = 0; o < 4; ++o) {
        const Vec2 f = factors(depth, x, o);
        const double q = outcome_prob(o);
        const double c0 = sh0 * f.v0, c1 = sh1 * f.v1;
        const double d0 = c0 - sh0, d1 = c1 - sh1;
        const double dg = value(depth + 1, next_x(depth, x, o), c0, c1) - L.g;
        L.a.a00 += q * d0 * d0;
        L.a.a01 += q * d0 * d1;
        L.a.a11 += q * d1 * d1;
        L.h.v0 += q * d0 * dg;
        L.h.v1 += q * d1 * dg;
    }
    L.delta_f = solve_sym2(L.a, L.h).x;
    return L;
}

} // namespace bhedge
