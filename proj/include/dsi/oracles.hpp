#pragma once

#include <functional>

#include "dsi/fourier.hpp"
#include "dsi/grid.hpp"

namespace dsi {

/// Closed-form space-time function u(t, x).
using StFunc = std::function<cplx(double t, const double* x)>;

struct ManufacturedProblem {
    Slice phi;
    BoundaryTrace f;
    /// F = i u_t + Lap u + q u on full levels.
    ComplexField F;
    ComplexField exact;
};

/// Traces of u* and the induced source. u_t and lap_u are the caller's analytic derivatives.
ManufacturedProblem manufactured_problem(const GridPtr& g, const StFunc& u, const StFunc& u_t, const StFunc& lap_u,
                                         const Potential& q);

/// Samples a closed-form function on every node and level.
ComplexField sample_field(const GridPtr& g, const StFunc& u);

/// Interior side of the q identity: sum_k dt sum_interior h^n q^{k+1/2} avg(u1) avg(v).
cplx q_identity_interior(const Potential& q, const ComplexField& u1, const ComplexField& v);

/// Interior side of the b identity for J = b (grad ua . conj(grad ub)):
/// sum_k dt sum_faces h^n avg_t(face average of J_a) (v(x+e_a) - v(x)) / h_a over faces
/// whose tangential indices are interior.
cplx b_identity_interior(const RealVectorField& b, const ComplexField& ua, const ComplexField& ub,
                         const ComplexField& v);

/// Brute-force node trapezoid of b.grad(v) |grad u1|^2 over Omega_T (consistency cross-check only).
cplx b_integrand_trapezoid(const RealVectorField& b, const ComplexField& u1, const ComplexField& v);

// ---- closed-form coefficient families ---------------------------------------------

/// One-dimensional factor: constant 1, Gaussian exp(-(s - a)^2 / (2 b^2)) or cosine cos(a s + b).
struct Factor1D {
    enum class Kind { constant, gaussian, cosine };
    Kind kind = Kind::constant;
    double a = 0.0;
    double b = 0.0;

    double eval(double s) const;
    /// int e^{i w s} factor(s) ds: over [0, L) for constant and cosine, over the line for Gaussians.
    cplx transform(double w, double L) const;
};

struct SeparableTerm {
    double amplitude = 1.0;
    Factor1D time;
    std::vector<Factor1D> space;
};

/// Sum of separable terms amplitude * f_t(t) * prod_a f_a(x_a).
struct FieldDescriptor {
    std::vector<SeparableTerm> terms;
    double eval(double t, const double* x) const;
    RealField sample(const GridPtr& g) const;
};

/// Exact transform on the dual lattice of the grid (time window [0, T), space windows [0, m_a h_a)).
FourierSampleSet analytic_fourier(const FieldDescriptor& d, const GridPtr& g);

/// Gaussian bump centred in Omega_T: widths 0.12 box in space and 0.15 T in time.
FieldDescriptor q_bench_descriptor(const SpaceTimeGrid& g, double amplitude = 2.0);
Potential q_bench(const GridPtr& g, double amplitude = 2.0);

/// Gaussian envelope (width 0.15 box) times a direction rotating with x_1,
/// (cos th, sin th[, 0.5 sin th]) with th = pi (x_1 / box_1 - 1/2), times 1 + 0.25 sin(pi t / T).
RealVectorField b_bench(const GridPtr& g, double amplitude = 1.0);

}  // namespace dsi
