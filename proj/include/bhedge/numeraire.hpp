#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "bhedge/market.hpp"
#include "bhedge/stats.hpp"

namespace bhedge {

class NoRiskPremiumSupport : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class PositivityViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything the hedging and pricing code needs from the growth-optimal
// portfolio at one state.
struct GopState {
    double pi_star = 0.0;
    double theta1 = 0.0;
    double sigma1 = 0.0;
    int n_marks = 0;
    std::array<double, kMaxMarks> k1{};
    std::array<double, kMaxMarks> psi{};
    std::array<double, kMaxMarks> k_theta{};
};

// F(pi) = pi*sigma1^2 + sum_k lambda_k pi K1_k^2 / (1 + pi K1_k) - (b1 - r)
double gop_foc(const MarketModel& m, double pi, double t, double x, double s1);
double solve_gop_fraction(const MarketModel& m, double t, double x, double s1);

struct MarketPriceOfRisk {
    double theta1 = 0.0;
    std::vector<double> psi;
};

MarketPriceOfRisk derive_market_price_of_risk(const MarketModel& m, double pi_star, double t, double x, double s1);
std::vector<double> k_theta(const MarketModel& m, const std::vector<double>& psi, double t, double x, double s1);
// b1 - r - theta1*sigma1 - sum_k lambda_k K1_k psi_k
double risk_premium_residual(const MarketModel& m, double theta1, const std::vector<double>& psi, double t, double x,
                             double s1);

class GopSpec {
public:
    // theta1_shift != 0 deliberately mis-specifies the diffusion risk price
    explicit GopSpec(MarketModel model, double theta1_shift = 0.0);

    GopState at(double t, double x, double s1) const;

    double pi_star(double t, double x, double s1) const { return at(t, x, s1).pi_star; }
    double theta1(double t, double x, double s1) const { return at(t, x, s1).theta1; }
    double psi_theta(int k, double t, double x, double s1) const;
    double k_theta(int k, double t, double x, double s1) const;

    const MarketModel& model() const { return model_; }
    double theta1_shift() const { return shift_; }
    bool depends_on_t() const { return dep_t_; }
    bool depends_on_x() const { return dep_x_; }
    bool depends_on_s1() const { return dep_s1_; }

private:
    GopState compute(double t, double x, double s1) const;

    MarketModel model_;
    double shift_ = 0.0;
    bool dep_t_ = false, dep_x_ = false, dep_s1_ = false;
    bool constant_ = false;
    GopState const_state_;
};

// Small per-thread memo; most path steps revisit the previous state's coefficients.
class GopCache {
public:
    explicit GopCache(const GopSpec& gop) : gop_(&gop) {}
    const GopState& at(double t, double x, double s1);

private:
    struct Slot {
        bool valid = false;
        double t = 0.0, x = 0.0, s1 = 0.0;
        GopState st;
    };
    const GopSpec* gop_;
    std::array<Slot, 4> slots_{};
    int next_ = 0;
};

void simulate_gop_and_benchmark(PathBundle& paths, const GopSpec& gop, Exec exec = Exec::parallel);

// Largest relative gap between S/S_gop and a direct integration of the
// benchmarked SDEs on the same noise.
double benchmark_direct_discrepancy(const PathBundle& paths, const GopSpec& gop);

enum class Benchmarked { s0hat, s1hat, numeraire };

struct DriftStep {
    int step = 0;
    double mean = 0.0, se = 0.0, z = 0.0;
};

struct DriftStats {
    std::vector<DriftStep> steps;
    double max_abs_z = 0.0;
    int argmax_step = 0;
    bool passed = true;
    MeanSe terminal;  // Y_T - Y_0
};

DriftStats martingale_drift_check(const PathBundle& paths, Benchmarked component, Exec exec = Exec::parallel);

} // namespace bhedge
