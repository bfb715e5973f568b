#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsi/reconstruct_q.hpp"

namespace dsi {

// ---- second-order data --------------------------------------------------------------

/// Supplies Lambda_b data (final state of u2 and D_nu u2 - nu . J) for one input.
class BDataSource {
public:
    virtual ~BDataSource() = default;
    virtual GridPtr grid() const = 0;
    virtual Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const = 0;
};

/// Second-order data computed directly from the true coefficients. u2 is not required to start
/// from rest (the source may be nonzero at t = 0).
class DirectBSource : public BDataSource {
public:
    DirectBSource(Potential q, RealVectorField b, SolverOptions opt = {});
    GridPtr grid() const override { return q_.grid; }
    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override;

private:
    Potential q_;
    RealVectorField b_;
    SolverOptions opt_;
};

/// g2 extracted from nonlinear measurements at eps and 2 eps.
class ExtractedBSource : public BDataSource {
public:
    ExtractedBSource(Potential q, NonlinearitySpec nl, double eps, PicardOptions opt = {});
    GridPtr grid() const override { return q_.grid; }
    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override;

private:
    Potential q_;
    NonlinearitySpec nl_;
    double eps_;
    PicardOptions opt_;
};

/// The four measurements of one polarization and the cross term they encode.
struct PolarizedDatum {
    /// Lambda_b(phi_a + c phi_b, f_a + c f_b) for c = 1, -1, i, -i.
    Measurement plus, minus, plus_i, minus_i;
    /// ([M(1) - M(-1)] + i [M(i) - M(-i)]) / 4: the data of u2 driven by b grad(u_a) . conj(grad(u_b)).
    Measurement cross;
};

PolarizedDatum polarize(const Measurement& plus, const Measurement& minus, const Measurement& plus_i,
                        const Measurement& minus_i);
PolarizedDatum polarize(const BDataSource& src, const Slice& phi_a, const BoundaryTrace& f_a, const Slice& phi_b,
                        const BoundaryTrace& f_b, const std::string& key);

// ---- identity -----------------------------------------------------------------------

/// Boundary side of the b identity for cross data and an adjoint solution v:
/// -i h^n sum_int u2^N v^N - sum_k dt sum_faces |face| avg(G) avg(v).
/// When v solves the adjoint equation with the true potential this equals
/// sum_k dt sum_faces h^n avg(face average of J_a) avg(D_a v), J = b grad(u_a) . conj(grad(u_b)).
cplx assemble_b_identity(const Measurement& cross, const ComplexField& v);

/// Linear functional on the first input of a polarized pair: for fixed (phi_b, f_b) and v,
/// pair(phi_a, f_a) = assemble_b_identity(cross data of (a, b), v).
class CrossFunctionalSource {
public:
    virtual ~CrossFunctionalSource() = default;
    virtual GridPtr grid() const = 0;
    /// One representer per test field in `vs`.
    virtual std::vector<DataRepresenter> represent(const Slice& phi_b, const BoundaryTrace& f_b,
                                                   const std::vector<ComplexField>& vs) const = 0;
};

/// Evaluates the cross functional of the true second-order map by transposing the solver chain
/// (u_a -> J -> u2 -> measured data -> identity) instead of measuring each pair.
class TransposedCrossSource : public CrossFunctionalSource {
public:
    TransposedCrossSource(Potential q, RealVectorField b, SolverOptions opt = {});
    GridPtr grid() const override { return q_.grid; }
    std::vector<DataRepresenter> represent(const Slice& phi_b, const BoundaryTrace& f_b,
                                           const std::vector<ComplexField>& vs) const override;

private:
    Potential q_;
    RealVectorField b_;
    SolverOptions opt_;
};

// ---- B_v sampling -------------------------------------------------------------------

/// Half-level field B_v = b . grad v on every node (nt slices), with the probe it belongs to.
struct BvField {
    GridPtr grid;
    std::vector<cplx> halves;
    int member = -1;
};

/// Half-level values of b . avg_t(grad v): the field the sampler targets.
BvField bv_of(const RealVectorField& b, const ComplexField& v);

/// Literal pair: u_a data P(lambda omega) e^{i(tau t + xi.x)}, u_b data P(lambda omega), omega . xi = 0.
/// Identity divided by the discrete |grad P|^2. Two or more lambdas: Richardson in 1/lambda on the last two.
cplx sample_bv_fourier(const BDataSource& src, const ComplexField& v, const std::vector<double>& lambdas,
                       const std::vector<double>& omega, double tau, const std::vector<double>& xi);

struct BSamplingOptions {
    /// Empty: lambda_ladder(grid).
    std::vector<double> lambdas;
    int directions = 64;
    double eta_max = 2.0;
    int threads = 1;
};

struct BSamplingReport {
    std::size_t probes_used = 0;
    std::size_t unreached = 0;
    double max_eta = 0.0;
};

/// Lattice samples of B_v for each test field: u_b is the dictionary plane wave P(lambda omega), u_a the
/// exact discrete wave whose wavevector lambda omega - xi - eta matches tau; the identity is divided by
/// the gradient symbol product and the half-level averaging factor and shifted by e^{-i eta.x_c}.
std::vector<FourierSampleSet> sample_bv_matched(const CrossFunctionalSource& src, const std::vector<ComplexField>& vs,
                                                const BSamplingOptions& opt, BSamplingReport* report = nullptr);

/// Inverse lattice transform of B_v samples; unpopulated samples count as zero.
BvField recover_bv(const FourierSampleSet& samples, int member = -1);

// ---- pointwise solve ----------------------------------------------------------------

struct PointwiseOptions {
    /// Threshold factor: delta_det = det_factor * lambda^n * |det omega|.
    double det_factor = 0.1;
    /// Error when more than this fraction of (node, half level) pairs fall below delta_det.
    double max_flagged = 0.2;
};

struct PointwiseResult {
    RealVectorField b;
    /// Fraction of (node, half level) pairs at or above delta_det.
    double coverage = 0.0;
    /// 1 where the node was filled from a neighbour, per half level (nt slices of nodes).
    std::vector<unsigned char> flagged;
    /// ||Im b|| / ||Re b|| before the real projection.
    double imag_ratio = 0.0;
    double delta_det = 0.0;
};

/// Per half level and node: rows avg_t(grad v_j), right-hand sides B_{v_j}; k > n members are solved
/// in least squares. Failing nodes take the value of the nearest accepted node on the same level.
PointwiseResult solve_pointwise_b(const std::vector<BvField>& bv, const VjFamily& family,
                                  const PointwiseOptions& opt = {});

struct BErrorReport {
    double l2_rel = 0.0;
    double linf_rel = 0.0;
    double imag_ratio = 0.0;
    double coverage = 0.0;
};

BErrorReport b_error(const RealVectorField& recovered, const RealVectorField& truth);

}  // namespace dsi
