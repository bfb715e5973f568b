#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsi/grid.hpp"

namespace dsi {

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SolverOptions {
    /// Relative residual target of each step system.
    double solver_tol = 1e-10;
    /// Richardson sweeps before giving up on the fast path.
    int max_sweeps = 400;
    /// Contraction factor max|q| dt / 2 above which the sparse direct path is used.
    double direct_threshold = 0.5;
    bool force_direct = false;
};

enum class RemainderKind { none, cubic_flat };

/// J(t,x,p) = |p|^2 b(t,x) + R(t,x,p). cubic_flat: R = c mu(t) |p|^2 p, mu(t) = exp(-1/t).
struct NonlinearitySpec {
    RealVectorField b;
    RemainderKind remainder = RemainderKind::none;
    double c = 0.0;

    bool active() const;
};

/// exp(-1/t) for t > 0, 0 otherwise.
double flat_profile(double t);
/// Remainder R(t, p) for one gradient vector p (n components).
std::vector<cplx> remainder_value(const NonlinearitySpec& nl, double t, const cplx* p);

/// Node values of J on level k for the field slice u.
VectorSlice nonlinear_flux(const NonlinearitySpec& nl, const GridPtr& g, const cplx* u, std::size_t k);
/// Central divergence sum_a (J_a(x+e_a) - J_a(x-e_a)) / (2 h_a) on interior nodes, 0 elsewhere.
Slice flux_divergence(const GridPtr& g, const VectorSlice& J);

/// Zero potential on a grid.
Potential zero_potential(const GridPtr& g);
/// q must be real, finite, on the grid.
void check_potential(const Potential& q, const GridPtr& g);

/// One Crank-Nicolson step engine. Owns FFT plans and workspace; use one per thread.
class CnPropagator {
public:
    explicit CnPropagator(GridPtr g, SolverOptions opt = {});
    ~CnPropagator();
    CnPropagator(const CnPropagator&) = delete;
    CnPropagator& operator=(const CnPropagator&) = delete;

    const GridPtr& grid() const { return grid_; }
    const SolverOptions& options() const { return opt_; }

    /// Solves (s i/dt + Lap/2 + q/2) w = r on interior nodes, s = +1 or -1.
    /// r and w are node-layout slices; only interior entries are read or written.
    void solve_system(const double* qhalf, const cplx* r, cplx* w, int sign);

    /// Advances u^k to u^{k+1}. `next` must hold the boundary values of level k+1;
    /// its interior is overwritten. `src` (may be null) is the half-level source.
    void step(const cplx* cur, cplx* next, const double* qhalf, const cplx* src, int sign);

    /// Number of steps that used the sparse direct path.
    long direct_steps() const { return direct_steps_; }

private:
    struct Impl;
    GridPtr grid_;
    SolverOptions opt_;
    std::unique_ptr<Impl> impl_;
    long direct_steps_ = 0;
};

/// Generic IBVP: s i D_t u + Lap u + q u = F with u(0) = phi and lateral values from `f`.
/// F is given on full levels and averaged onto half levels; null means no source.
ComplexField solve_ibvp(const Potential& q, const Slice& phi, const BoundaryTrace& f, const ComplexField* F,
                        int sign, const SolverOptions& opt = {});

/// i u_t + Lap u + q u = 0, u(0) = phi, u = f on the lateral boundary.
ComplexField solve_linear(const Potential& q, const Slice& phi, const BoundaryTrace& f,
                          const SolverOptions& opt = {});

/// i u_t + Lap u + q u = F with zero initial and lateral data. Requires F(0) = 0.
ComplexField solve_source(const Potential& q, const ComplexField& F, const SolverOptions& opt = {});

/// F = div(|grad u1|^2 b) on full levels.
ComplexField quadratic_source(const RealVectorField& b, const ComplexField& u1);
/// Second-order field of the epsilon expansion. With strict = true the source must vanish at t = 0.
ComplexField compute_u2(const Potential& q, const RealVectorField& b, const ComplexField& u1, bool strict = true,
                        const SolverOptions& opt = {});

/// -i v_t + Lap v + q v = 0 solved as the conjugate of a forward problem.
ComplexField solve_adjoint(const Potential& q, const Slice& phi, const BoundaryTrace& f,
                           const SolverOptions& opt = {});

struct PicardReport {
    int iterations = 0;
    std::vector<double> increments;
    double residual = 0.0;
    bool converged = false;
};

struct NonlinearResult {
    ComplexField u;
    PicardReport report;
};

struct PicardOptions {
    double picard_tol = 1e-10;
    int max_iter = 50;
    SolverOptions solver;
};

/// Picard iteration on i u_t + Lap u + q u = div J(grad u) with data (eps phi, eps f).
/// Does not throw on non-convergence; inspect report.converged.
NonlinearResult solve_nonlinear_report(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                       const BoundaryTrace& f, double eps, const PicardOptions& opt = {});
/// As above but throws SolverError when the iteration does not converge.
NonlinearResult solve_nonlinear(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                const BoundaryTrace& f, double eps, const PicardOptions& opt = {});

/// Discrete L2(Omega_T) norm of the CN residual s i D_t u + (Lap + q) avg(u) - avg(F) on interior nodes.
double cn_residual(const Potential& q, const ComplexField& u, const ComplexField* F, int sign);
/// Same for the nonlinear equation with F = div J(grad u).
double nonlinear_residual(const Potential& q, const NonlinearitySpec& nl, const ComplexField& u);

/// Sup over levels of the spatial L2 norm (trapezoid weights).
double sup_l2(const ComplexField& u);

/// Weights on the data of solve_linear such that sum kappa*u equals the pairing with the data.
struct DataRepresenter {
    GridPtr grid;
    /// Weight on the initial slice (all nodes).
    Slice initial;
    /// lateral[k][s] weights the boundary value at boundary_nodes()[s] on level k (k >= 1; level 0 unused).
    std::vector<Slice> lateral;
    /// source[k] weights the half-level source (F^k + F^{k+1}) / 2 on interior nodes, k < nt.
    std::vector<Slice> source;

    /// sum kappa u for u = solve_linear(q, phi, f).
    cplx pair(const Slice& phi, const BoundaryTrace& f) const;
    /// sum kappa u for u = solve_source(q, F).
    cplx pair_source(const ComplexField& F) const;
};

/// Transpose of the (data, source)-to-solution map of solve_ibvp(q, ., ., ., +1) applied to kappa.
DataRepresenter transpose_data_map(const Potential& q, const ComplexField& kappa, const SolverOptions& opt = {});

}  // namespace dsi
