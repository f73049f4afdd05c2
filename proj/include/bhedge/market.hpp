#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bhedge/coefficient.hpp"
#include "bhedge/rng.hpp"

namespace bhedge {

inline constexpr int kMaxMarks = 8;

enum class Exec { serial, parallel };

struct JumpMeasure {
    std::vector<double> marks;
    std::vector<double> intensities;

    std::size_t size() const { return marks.size(); }
    double total_intensity() const;
};

class MalformedMeasure : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Law of X0. Dirac at MarketModel::x0 unless set.
struct XPrior {
    enum class Kind { dirac, discrete, gaussian };
    Kind kind = Kind::dirac;
    std::vector<double> values;
    std::vector<double> probs;
    double mean = 0.0, sd = 0.0;
};

struct MarketModel {
    Coefficient r, b0, sigma0, b1, sigma1;
    std::vector<Coefficient> k0, k1;  // one per mark
    double rho = 0.0;
    JumpMeasure jumps;
    double x0 = 0.0, s1_0 = 1.0;
    XPrior prior;

    int n_marks() const { return static_cast<int>(jumps.size()); }
    double lambda(int k) const { return jumps.intensities[static_cast<std::size_t>(k)]; }
    // sum_k lambda_k K0_k and sum_k lambda_k K1_k
    double comp_x(double t, double x) const;
    double comp_s1(double t, double x, double s1) const;
};

struct StateBox {
    double t_lo = 0.0, t_hi = 1.0;
    double x_lo = 0.0, x_hi = 0.0;
    double s1_lo = 1.0, s1_hi = 1.0;
    int n_per_axis = 5;

    std::vector<std::array<double, 3>> points() const;
    // n pseudo-random points, reproducible from seed
    std::vector<std::array<double, 3>> sample(int n, std::uint64_t seed) const;
};

struct Violation {
    std::string condition;
    double t = 0.0, x = 0.0, s1 = 0.0;
    double value = 0.0;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool passed() const { return violations.empty(); }
};

void check_measure(const JumpMeasure& m);
ValidationReport validate_model(const MarketModel& model, const StateBox& box);

struct TimeGrid {
    double T = 1.0;
    int n_steps = 100;

    double dt() const { return T / n_steps; }
    double t(int i) const { return i == n_steps ? T : i * dt(); }
};

struct JumpEvent {
    int step = 0;
    int mark = 0;
    double x_pre = 0.0;
    double s1_pre = 0.0;
    double k1 = 0.0;  // relative jump applied to S1
};

struct PathBundle {
    TimeGrid grid;
    int n_paths = 0;
    std::vector<double> x, s0, s1;          // n_paths * (n_steps + 1)
    std::vector<double> dw, du;             // n_paths * n_steps
    std::vector<JumpEvent> jumps;           // grouped by path, ordered by step
    std::vector<std::size_t> jump_begin;    // n_paths + 1 offsets
    std::vector<double> gop, s0hat, s1hat;  // filled by simulate_gop_and_benchmark

    std::size_t node(int p, int i) const {
        return static_cast<std::size_t>(p) * static_cast<std::size_t>(grid.n_steps + 1) + static_cast<std::size_t>(i);
    }
    std::size_t inc(int p, int i) const {
        return static_cast<std::size_t>(p) * static_cast<std::size_t>(grid.n_steps) + static_cast<std::size_t>(i);
    }
    std::span<const JumpEvent> path_jumps(int p) const {
        return {jumps.data() + jump_begin[static_cast<std::size_t>(p)],
                jumps.data() + jump_begin[static_cast<std::size_t>(p) + 1]};
    }
    bool benchmarked() const { return !s1hat.empty(); }
};

// One Euler step plus end-of-step jumps; shared by path simulation and
// price-surface restarts so both use the identical scheme.
struct StepNoise {
    double z_w = 0.0, z_perp = 0.0;
    int n_jumps = 0;
    std::array<int, 16> marks{};
};

StepNoise draw_step_noise(StreamRng& rng, double dt, const MarketModel& model);

double sample_prior(const MarketModel& model, StreamRng& rng);

PathBundle simulate_paths(const MarketModel& model, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                          Exec exec = Exec::parallel);

} // namespace bhedge
