#pragma once

#include <string>
#include <vector>

#include "bhedge/filtering.hpp"
#include "bhedge/linalg2.hpp"
#include "bhedge/pricing.hpp"
#include "bhedge/stats.hpp"

namespace bhedge {

// Densities of the sharp brackets <S^hat> (a, symmetric) and <g, S^hat> (h)
// with respect to dt.
struct BracketDensities {
    double a00 = 0.0, a01 = 0.0, a11 = 0.0;
    double h0 = 0.0, h1 = 0.0;

    Sym2 a() const { return {a00, a01, a11}; }
    Vec2 h() const { return {h0, h1}; }
};

BracketDensities bracket_densities(const MarketModel& m, const GopState& g, const PartialSet& d, const StatePoint& p);

// Probabilists' Gauss-Hermite rule: E[f(Z)] ~ sum w_i f(z_i), Z ~ N(0,1).
struct Quadrature {
    std::vector<double> nodes, weights;
};
Quadrature gauss_hermite(int n);
// Composite Simpson on [-8, 8] against the normal density; n odd. Robust to
// kinks, where Gauss-Hermite is not.
Quadrature normal_simpson(int n);

// One-step conditional moments of the discretized benchmarked prices:
// a = E[dS dS^T], h = E[dS dg] with dg the change of f over the step, and g = f
// at the left state. Jump configurations with up to max_jumps arrivals are
// enumerated; the Brownian increment is integrated by `q`, or by `q_multi`
// when two or more jumps arrive (probability O(dt^2)).
struct StepMoments {
    Sym2 a;
    Vec2 h;
    double g = 0.0;
};
StepMoments step_moments(const GopSpec& gop, GopCache& cache, const PriceFunction& f, const StatePoint& p, double dt,
                         const Quadrature& q, int max_jumps = 2, const Quadrature* q_multi = nullptr);

struct StrategyResult {
    Vec2 delta;
    bool singular = false;  // pseudo-inverse was used
};

StrategyResult full_info_strategy(const BracketDensities& bd);
StrategyResult partial_info_strategy(const Sym2& projected_a, const Vec2& projected_adf, double rank_tol = 1e-14);
double eta_component(double projected_g, const Vec2& delta, double sh0, double sh1);

// C_i = V_i - sum_{k<i} delta_k . (S^hat_{k+1} - S^hat_k), one path.
std::vector<double> cost_process(const std::vector<double>& value, const std::vector<Vec2>& delta,
                                 const std::vector<double>& sh0, const std::vector<double>& sh1);

// mean over paths of (C_N - C_t)^2; costs are n_paths rows of n_steps + 1
MeanSe risk_process(const std::vector<double>& costs, int n_steps, int t_index);

struct OrthogonalityStat {
    std::string name;
    MeanSe est;
    double z = 0.0;
};

// E[L * I] for terminal residual L and test gains I. Residuals within
// zero_tol of their mean count as identically zero.
OrthogonalityStat orthogonality_stat(const std::vector<double>& residual, const std::vector<double>& gains,
                                     std::string name, double zero_tol);

enum class Observation { full, prices };

const char* observation_name(Observation o);

// one_step: strategies from the conditional moments of the discrete step, so
// the residual is orthogonal to the simulated gains at any grid size.
// continuous: the bracket densities at the left state.
enum class Brackets { one_step, continuous };

const char* brackets_name(Brackets b);

struct MomentRule {
    int gh_order = 3;
    int gh_order_late = 7;  // near maturity, where g bends within one step
    int late_steps = 5;
    int final_nodes = 401;  // last step integrates the payoff itself
    int gh_order_multi = 1;
    int max_jumps = 2;
    double rank_tol = 1e-14;
};

struct HedgeConfig {
    Observation scheme = Observation::full;
    Brackets brackets = Brackets::one_step;
    MomentRule moments;
    FilterSettings filter;
    std::uint64_t seed = 7;
};

// Per-path hedge trajectories for the unscaled strategy.
struct HedgeRun {
    Observation scheme = Observation::full;
    int n_paths = 0, n_steps = 0;
    double T = 1.0;
    double h0 = 0.0;                        // sample mean of H_T
    std::vector<double> value;              // V_i, n_steps + 1 per path
    std::vector<double> delta0, delta1, eta;  // n_steps per path
    std::vector<double> gains;              // sum_{k<i} delta_k . dS, n_steps + 1 per path
    std::vector<double> payoff;             // per path
    std::vector<double> post_mean, post_sd, ess;  // filter, n_steps + 1 per path
    int singular_steps = 0;
    int multi_jump_steps = 0;
    int resamples = 0;
    double max_weight_error = 0.0;
    double max_full_partial_gap = 0.0;      // full scheme only: |delta^H - delta^F|
    double min_det_a = 0.0;                 // smallest a00*a11 - a01^2 seen (scaled)

    std::size_t node(int p, int i) const {
        return static_cast<std::size_t>(p) * static_cast<std::size_t>(n_steps + 1) + static_cast<std::size_t>(i);
    }
    std::size_t inc(int p, int i) const {
        return static_cast<std::size_t>(p) * static_cast<std::size_t>(n_steps) + static_cast<std::size_t>(i);
    }
};

HedgeRun hedge_paths(const PathBundle& b, const GopSpec& gop, const PriceFunction& g, const Claim& claim,
                     const HedgeConfig& cfg, Exec exec = Exec::parallel);

struct HedgeReport {
    double delta_scale = 1.0;
    double h0 = 0.0;
    MeanSe risk0, risk0_zero, risk_gap;    // R0(delta), R0(0), paired R0(delta) - R0(0)
    std::vector<double> risk_path, risk_path_se;
    MeanSe residual;                       // L_T
    std::vector<OrthogonalityStat> orthogonality;
    double max_abs_z = 0.0;
    double max_cost_spread = 0.0;          // max |C_t - C_0| over paths and t
    double replication_error = 0.0;       // max |V_T - H_T|
};

// Costs of delta_scale * strategy; V is unchanged, eta absorbs the scaling.
HedgeReport hedge_report(const HedgeRun& run, const PathBundle& b, double delta_scale = 1.0);

} // namespace bhedge
