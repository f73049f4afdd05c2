#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bhedge/numeraire.hpp"

namespace bhedge {

struct StatePoint {
    double t = 0.0, x = 0.0, s0 = 1.0, s1 = 1.0, sh0 = 1.0, sh1 = 1.0;
};

// Noise of one grid step: Brownian increments and the marks that fire, in order.
struct StepDraw {
    double dw = 0.0, du = 0.0;
    int n_jumps = 0;
    std::array<int, 16> marks{};
};

// State at t + dt from the left state p; the same arithmetic as
// simulate_paths followed by simulate_gop_and_benchmark.
StatePoint advance_state(const GopSpec& gop, GopCache& cache, const StatePoint& p, double dt, const StepDraw& d);

class ClaimIntegrabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ExtrapolationError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

struct Claim {
    enum class Form { identity_s1hat, constant, call_on_s1hat };
    Form form = Form::identity_s1hat;
    double value = 0.0;   // constant claim
    double strike = 1.0;  // call
    double maturity = 1.0;

    double payoff(double sh0, double sh1) const;
    // E[payoff] when sh1_T is lognormal with mean `forward` and log-variance `var`
    double conditional(double forward, double var) const;
    bool uses_s0hat() const { return false; }
};

const char* claim_name(Claim::Form f);

// Value with first and (optionally) second partials. h0/h1 are the
// benchmarked coordinates.
struct Jet {
    double v = 0.0;
    double t = 0.0, x = 0.0, s0 = 0.0, s1 = 0.0, h0 = 0.0, h1 = 0.0;
    double xx = 0.0, s1s1 = 0.0, h0h0 = 0.0, h1h1 = 0.0;
    double xs1 = 0.0, xh0 = 0.0, xh1 = 0.0, s1h0 = 0.0, s1h1 = 0.0, h0h1 = 0.0;
};

class PriceFunction {
public:
    virtual ~PriceFunction() = default;
    virtual double value(const StatePoint& p) const = 0;
    virtual Jet jet(const StatePoint& p, bool second) const = 0;
};

// Any callable; partials by central differences with power-of-two steps.
class CallablePrice : public PriceFunction {
public:
    explicit CallablePrice(std::function<double(const StatePoint&)> f, double rel_step = 1e-3)
        : f_(std::move(f)), rel_step_(rel_step) {}
    double value(const StatePoint& p) const override { return f_(p); }
    Jet jet(const StatePoint& p, bool second) const override;

private:
    std::function<double(const StatePoint&)> f_;
    double rel_step_;
};

// axis order: t, x, s1, sh0, sh1. A single-node axis is flat.
struct SurfaceAxes {
    std::vector<double> t, x, s1, sh0, sh1;

    const std::vector<double>& operator[](int a) const;
    std::vector<double>& operator[](int a);
};

class PriceSurface : public PriceFunction {
public:
    PriceSurface() = default;
    PriceSurface(SurfaceAxes axes, std::vector<double> g, std::vector<double> se, int n_paths, std::uint64_t seed,
                 std::string estimator);

    const SurfaceAxes& axes() const { return axes_; }
    const std::vector<double>& values() const { return g_; }
    const std::vector<double>& std_errors() const { return se_; }
    int n_paths() const { return n_paths_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& estimator() const { return estimator_; }

    std::size_t index(std::size_t it, std::size_t ix, std::size_t is, std::size_t i0, std::size_t i1) const;
    std::size_t size() const { return g_.size(); }
    StatePoint node_point(std::size_t flat) const;
    bool contains(const StatePoint& p) const;

    double value(const StatePoint& p) const override;
    Jet jet(const StatePoint& p, bool second) const override;

private:
    void build_derivatives();
    double interp(const std::vector<double>& field, const StatePoint& p) const;

    SurfaceAxes axes_;
    std::vector<double> g_, se_;
    std::array<std::vector<double>, 5> d_;  // node partials along each axis
    std::array<std::size_t, 5> stride_{};
    int n_paths_ = 0;
    std::uint64_t seed_ = 0;
    std::string estimator_;
};

enum class Estimator { plain, conditional, automatic };

struct SurfaceSpec {
    SurfaceAxes axes;
    int n_paths = 10000;
    std::uint64_t seed = 1;
    Estimator estimator = Estimator::automatic;
    bool control_variates = true;
};

// Conditioning on the jump/factor path leaves a Gaussian log-price when the
// coefficients ignore s1 and X is driven independently of W.
bool conditional_applicable(const MarketModel& m, const Claim& c);

PriceSurface estimate_price_function(const GopSpec& gop, const Claim& claim, const TimeGrid& grid,
                                     const SurfaceSpec& spec, Exec exec = Exec::parallel);

// Value at the post-jump argument minus value at the point, per mark.
struct PartialSet {
    double g = 0.0;
    double dx = 0.0, ds1 = 0.0, dsh0 = 0.0, dsh1 = 0.0;
    int n_marks = 0;
    std::array<double, kMaxMarks> jump{};
};

StatePoint jumped_point(const StatePoint& p, const MarketModel& m, const GopState& g, int k);
PartialSet price_partials(const PriceFunction& f, const StatePoint& p, const MarketModel& m, const GopState& g);
PartialSet price_partials(const PriceFunction& f, const StatePoint& p, const GopSpec& gop);

double generator_apply(const GopSpec& gop, const PriceFunction& f, const StatePoint& p);

struct ResidualStats {
    double max_abs = 0.0, rms = 0.0;
    double scale = 0.0;
    double max_rel = 0.0, rms_rel = 0.0;
    int n_points = 0, n_skipped = 0;
};

std::vector<StatePoint> interior_nodes(const PriceSurface& s, double s0 = 1.0);
ResidualStats pde_residual(const PriceSurface& s, const GopSpec& gop, const std::vector<StatePoint>& points);

} // namespace bhedge
