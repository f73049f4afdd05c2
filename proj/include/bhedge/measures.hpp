#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bhedge/numeraire.hpp"

namespace bhedge {

class InvalidTilt : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Diffusion tilt xi and per-mark jump tilt eta of a Girsanov density.
struct GirsanovSpec {
    std::function<double(double t, double x, double s1)> xi;
    std::function<double(int k, double t, double x, double s1)> eta;
    int n_marks = 0;

    static GirsanovSpec constant(double xi, std::vector<double> eta);
    // (-theta1 + xi_shift, -psi): the tilt that turns the numeraire into the bank account
    static GirsanovSpec from_gop(const GopSpec& gop, double xi_shift = 0.0);
};

struct DensityPaths {
    int n_paths = 0, n_steps = 0;
    std::vector<double> L;  // n_steps + 1 per path
    MeanSe terminal;
    double min_l = 0.0;

    double at(int p, int i) const {
        return L[static_cast<std::size_t>(p) * static_cast<std::size_t>(n_steps + 1) + static_cast<std::size_t>(i)];
    }
};

DensityPaths girsanov_density_path(const PathBundle& b, const MarketModel& m, const GirsanovSpec& spec,
                                   Exec exec = Exec::parallel);

// xi*sigma1 + sum_k lambda_k K1_k eta_k - (r - b1)
double martingale_measure_residual(const MarketModel& m, const GirsanovSpec& spec, double t, double x, double s1);

struct MeasureConditions {
    double sup_theta = 0.0;
    double sup_psi = 0.0;
    double nu_total = 0.0;
    int n_points = 0;
    bool passed = true;
    std::vector<std::string> warnings;
};

MeasureConditions measure_conditions_check(const GopSpec& gop, const StateBox& box);

// L_T * (S1_T/S0_T - S1_0/S0_0)
MeanSe reweighted_drift(const PathBundle& b, const DensityPaths& d);

} // namespace bhedge
