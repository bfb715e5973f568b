#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsi/solver.hpp"

namespace dsi {

// ---- expansion residual -------------------------------------------------------------

struct ExpansionReport {
    std::vector<double> eps;
    /// sup_t || u(eps) - eps u1 - eps^2 u2 ||_{L2(Omega)}
    std::vector<double> residual;
    /// residual / sup_t || eps u1 ||
    std::vector<double> relative;
    /// Excluded from the fit: relative residual below 100 solver_tol.
    std::vector<bool> excluded;
    /// Values of eps whose Picard iteration did not converge (not in `eps`).
    std::vector<double> dropped;
    double slope = 0.0;
    double intercept = 0.0;
    /// log r - (slope log eps + intercept) over the fitted points.
    std::vector<double> fit_residuals;
    int fitted = 0;
    double solver_tol = 0.0;
};

/// Residual of the second-order expansion at each eps and a least-squares fit of log r against log eps.
/// u2 is computed without requiring the quadratic source to vanish at t = 0.
ExpansionReport expansion_residual_study(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                         const BoundaryTrace& f, const std::vector<double>& eps_list,
                                         const PicardOptions& opt = {}, int threads = 1);

void write_expansion_csv(const std::string& path, const ExpansionReport& r);

// ---- Picard contraction -------------------------------------------------------------

struct ContractionReport {
    double eps = 0.0;
    std::vector<double> increments;
    /// increments[i] / increments[i-1]
    std::vector<double> ratios;
    /// Geometric mean of the ratios taken while the increment is above 100 picard_tol.
    double rho = 0.0;
    int iterations = 0;
    bool converged = false;
    /// rho >= 1 or no convergence.
    bool failed = false;
};

ContractionReport contraction_study(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                    const BoundaryTrace& f, double eps, const PicardOptions& opt = {});

struct ContractionScan {
    std::vector<ContractionReport> runs;
    /// rho(eps_{i+1}) / rho(eps_i) for consecutive runs that both contracted.
    std::vector<double> halving_ratios;
    /// rho decreases along the eps list over the contracting runs.
    bool monotone = true;
};

ContractionScan contraction_scan(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                 const BoundaryTrace& f, const std::vector<double>& eps_list,
                                 const PicardOptions& opt = {}, int threads = 1);

// ---- remainder admissibility --------------------------------------------------------

/// R(t, x, p) for complex p in C^n.
using RemainderFn = std::function<std::vector<cplx>(double t, const double* x, const cplx* p)>;

struct AdmissibilityOptions {
    int n = 2;
    /// Largest |p| sampled.
    double radius = 0.5;
    /// Shells |p| in [radius 10^-(j+1), radius 10^-j], j < shells.
    int shells = 4;
    int samples_per_shell = 24;
    /// Max over shells of C_j / C_0 tolerated per derivative order.
    double growth_limit = 4.0;
    std::vector<double> flat_times{0.1, 0.05, 0.025};
    double flat_power = 5.0;
    unsigned seed = 7;
};

struct AdmissibilityReport {
    /// Fitted constant per derivative order |alpha| = 0..3: max |d^alpha R| / |p|^{3 - |alpha|}.
    std::vector<double> C;
    /// Per order: constant in each shell, outermost first.
    std::vector<std::vector<double>> shell_C;
    bool bounded = true;
    /// sup |R| / t^power at each flat time.
    std::vector<double> flat_ratio;
    bool flat = true;
    bool admissible = true;
    std::string reason;
};

/// Finite-difference check of |d^alpha_p R| <= C |p|^{3-|alpha|} for |alpha| <= 3, derivatives taken
/// in the 2n real coordinates of p, and of flatness at t = 0.
AdmissibilityReport check_remainder_admissibility(const RemainderFn& R, const AdmissibilityOptions& opt = {});
AdmissibilityReport check_remainder_admissibility(const NonlinearitySpec& nl, AdmissibilityOptions opt = {});

}  // namespace dsi
