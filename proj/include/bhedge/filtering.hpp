#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bhedge/numeraire.hpp"

namespace bhedge {

class FilterDegeneracy : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FilterSettings {
    int n_particles = 0;          // 0: enumerate a discrete prior, else 1000 sampled
    double ess_fraction = 0.5;    // resample when ESS < fraction * n
    double jump_tol_rel = 1e-9;   // jump-size compatibility
    double obs_tol = 1e-9;        // deterministic observation consistency
};

struct ParticleFilter {
    std::vector<double> particles;
    std::vector<double> weights;
    int step = 0;
    double ess_fraction = 0.5;
    bool enumerating = false;  // finite support, never resampled
    std::uint64_t seed = 0, stream = 0;
    int resamples = 0;
    int multi_jump_steps = 0;

    std::size_t size() const { return particles.size(); }
    double ess() const;
    double mean() const;
    double sd() const;
    double weight_error() const;  // |sum w - 1|
};

ParticleFilter init_filter(const XPrior& prior, double x0, int n_particles, std::uint64_t seed,
                           std::uint64_t stream = 0, double ess_fraction = 0.5);

// What an observer of (S0, S1, S_gop) sees over one grid step.
struct ObservationStep {
    int step = 0;
    double t = 0.0, dt = 0.0;
    double s0 = 1.0, s1 = 1.0;       // left values
    double log_return = 0.0;          // S1 log-return with observed jumps removed
    double s0_log_increment = 0.0;
    double gop_log_increment = 0.0;   // numeraire log-return with its jumps removed
    bool has_gop = false;
    int n_jumps = 0;
    std::array<double, 16> jump_size{};   // observed relative jumps of S1
    std::array<double, 16> jump_s1_pre{};
};

ObservationStep observe(const PathBundle& b, const GopSpec& gop, int p, int i);

// Multiply weights by likelihoods (log scale, -inf allowed), renormalize,
// resample if the ESS falls below threshold.
void reweight_log(ParticleFilter& pf, const std::vector<double>& loglik, const char* what);
void maybe_resample(ParticleFilter& pf);

template <class Lik>
void reweight(ParticleFilter& pf, Lik lik) {
    std::vector<double> ll(pf.size());
    for (std::size_t i = 0; i < pf.size(); ++i) {
        const double l = lik(pf.particles[i]);
        ll[i] = l > 0.0 ? std::log(l) : -INFINITY;
    }
    reweight_log(pf, ll, "likelihood");
}

template <class F>
double project(const ParticleFilter& pf, F f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pf.size(); ++i) acc += pf.weights[i] * f(pf.particles[i]);
    return acc;
}

// Self-normalized standard error of project(pf, f).
template <class F>
double particle_se(const ParticleFilter& pf, F f) {
    const double m = project(pf, f);
    double acc = 0.0;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        const double d = f(pf.particles[i]) - m;
        acc += pf.weights[i] * pf.weights[i] * d * d;
    }
    return std::sqrt(acc);
}

void filter_step(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs,
                 const FilterSettings& cfg = {});
void jump_update(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs, int j,
                 const FilterSettings& cfg = {});
// filter_step followed by one jump_update per observed jump
void assimilate(ParticleFilter& pf, const GopSpec& gop, const ObservationStep& obs, const FilterSettings& cfg = {});

// Filter every path of a bundle on its own price history.
struct FilterTrajectories {
    int n_paths = 0, n_steps = 0;
    std::vector<double> mean, sd, ess;  // n_steps + 1 per path
    int resamples = 0;
    int multi_jump_steps = 0;
    double max_weight_error = 0.0;
};

FilterTrajectories filter_paths(const PathBundle& b, const GopSpec& gop, const FilterSettings& cfg, std::uint64_t seed,
                                Exec exec = Exec::parallel);

} // namespace bhedge
