#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsi/solver.hpp"

namespace dsi {

class ProbeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ProbeSpec {
    double lambda = 1.0;
    std::vector<double> omega;
    double tau = 0.0;
    std::vector<double> xi;
    /// -1: forward probe e^{-i(..)}, +1: adjoint probe e^{+i(..)}.
    int sign = -1;
    int order = 0;
};

struct ProbeSolution {
    ProbeSpec spec;
    ComplexField field;
    ComplexField remainder;
    /// lambda ||R||_{L2(Omega_T)} and ||grad R||_{L2(Omega_T)}.
    double lambda_r = 0.0;
    double grad_r = 0.0;

    double bound() const { return lambda_r + grad_r; }
};

/// Largest admissible lambda * max(h).
inline constexpr double kResolutionCap = 0.5;

// ---- discrete plane waves -----------------------------------------------------

/// Symbol of the discrete Laplacian on e^{iK.x}: -sum 4/h^2 sin^2(K_a h / 2).
double disc_symbol(const SpaceTimeGrid& g, const double* K);
/// Phase advance per step of a CN plane wave: theta = 2 atan(-sigma dt / 2).
double disc_theta(const SpaceTimeGrid& g, const double* K);
/// Derivative of disc_theta along the unit vector u.
double disc_theta_slope(const SpaceTimeGrid& g, const double* K, const double* u);
/// Symbol of the gradient stencil on interior nodes: sin(K_a h)/h.
double grad_symbol(const SpaceTimeGrid& g, int axis, double K);

/// Exact discrete solutions: sign = -1 gives e^{-iK.x} e^{-i theta k} (solves the forward scheme),
/// sign = +1 gives e^{iK.x} e^{i theta k} (solves the adjoint scheme).
ComplexField discrete_plane_wave(const GridPtr& g, const std::vector<double>& K, int sign);

double remainder_lambda_norm(const ComplexField& R, double lambda);
double remainder_grad_norm(const ComplexField& R);

void check_resolution(const SpaceTimeGrid& g, double lambda, double cap = kResolutionCap);

// ---- probes ---------------------------------------------------------------------

/// u1 = solve_linear(q, traces of the discrete phase of lambda omega); R1 = u1 / phase - 1.
ProbeSolution build_u1_probe(const Potential& q, const ProbeSpec& spec, const SolverOptions& opt = {},
                             double cap = kResolutionCap);

/// Free adjoint probe with data conj-phase * e^{i(tau t + xi.x)}; requires xi . omega = 0.
/// R2 = v / conj-phase - e^{i(tau t + xi.x)}.
ProbeSolution build_v_probe_free(const GridPtr& g, const ProbeSpec& spec, const SolverOptions& opt = {},
                                 double cap = kResolutionCap);

/// A = -int_0^s rhs(t, x - sigma omega) d sigma from the inflow face of the box padded by `pad`.
/// Outside the box the rhs is reflected evenly across the faces and tapered to zero over `pad`.
ComplexField solve_transport(const std::vector<double>& omega, const ComplexField& rhs, double pad = 0.0);

struct VjFamily {
    double lambda = 0.0;
    std::vector<std::vector<double>> omegas;
    std::vector<ProbeSolution> members;
    /// Amplitudes A_{jk}, k = 0..order, per member.
    std::vector<std::vector<ComplexField>> amplitudes;
    /// |det(d v_i / d x_j)| / lambda^n on every node and level (sqrt of the Gram determinant for more
    /// than n members).
    RealField det_ratio;
    double min_det_ratio = 0.0;
    /// |det[omega_jk]| (Gram form for more than n members).
    double omega_det = 0.0;
};

/// Adjoint probes v_j = e^{i phi_j} sum_k A_jk (2 i lambda)^{-k} + R_j for -i v_t + Lap v + q v = 0.
VjFamily build_vj_family(const Potential& q, double lambda, const std::vector<std::vector<double>>& omegas,
                         int order = 0, const SolverOptions& opt = {}, double pad = 0.0,
                         double cap = kResolutionCap);

/// Default frequency ladder: targets cap/max(h) * fractions, each moved within [0.9, 1] of its
/// target to keep lambda^2 away from the Dirichlet eigenvalues of the box.
std::vector<double> lambda_ladder(const SpaceTimeGrid& g, const std::vector<double>& fractions = {0.25, 0.5, 1.0},
                                  double cap = kResolutionCap);

/// omega perpendicular to xi (n = 2: rotate by 90 degrees; n = 3: the coordinate axis most
/// orthogonal to xi, Gram-Schmidt). xi = 0 gives e_1.
std::vector<double> perpendicular_direction(const std::vector<double>& xi);

// ---- cache ----------------------------------------------------------------------

/// One SRF1 file per probe, keyed by a hash of the spec, the grid and the potential.
class ProbeCache {
public:
    explicit ProbeCache(std::string dir);
    /// DSI_PROBE_CACHE overrides `fallback` when set and non-empty.
    static ProbeCache from_env(const std::string& fallback);
    const std::string& dir() const { return dir_; }
    static std::string key(const ProbeSpec& spec, const SpaceTimeGrid& g, const Potential* q,
                           const std::string& tag = "");
    std::optional<ComplexField> load(const std::string& key, const GridPtr& g) const;
    void store(const std::string& key, const ComplexField& f) const;

private:
    std::string dir_;
};

}  // namespace dsi
