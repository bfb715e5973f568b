#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dsi/fourier.hpp"
#include "dsi/measurement.hpp"
#include "dsi/probes.hpp"

namespace dsi {

class ReconstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- first-order data -------------------------------------------------------------

/// Supplies Lambda_q data (final state and flux of u1) for an input (phi, f).
class QDataSource {
public:
    virtual ~QDataSource() = default;
    virtual GridPtr grid() const = 0;
    /// `key` names the input; sources that persist data use it as the file stem.
    virtual Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const = 0;
};

/// Linearized data computed directly from the true potential.
class DirectQSource : public QDataSource {
public:
    explicit DirectQSource(Potential q, SolverOptions opt = {});
    GridPtr grid() const override { return q_.grid; }
    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override;

private:
    Potential q_;
    SolverOptions opt_;
};

/// g1 extracted from two nonlinear measurements at eps and 2 eps.
class ExtractedQSource : public QDataSource {
public:
    ExtractedQSource(Potential q, NonlinearitySpec nl, double eps, PicardOptions opt = {});
    GridPtr grid() const override { return q_.grid; }
    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override;

private:
    Potential q_;
    NonlinearitySpec nl_;
    double eps_;
    PicardOptions opt_;
};

/// Reads `<dir>/<key>` when present; otherwise asks `inner` (if any) and stores the result.
class CachedQSource : public QDataSource {
public:
    CachedQSource(std::shared_ptr<const QDataSource> inner, GridPtr g, std::string dir);
    GridPtr grid() const override { return grid_; }
    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override;

private:
    std::shared_ptr<const QDataSource> inner_;
    GridPtr grid_;
    std::string dir_;
};

// ---- identity -----------------------------------------------------------------------

/// Boundary side of the q identity for u1 with data (phi, f) and a free adjoint solution v:
/// -i h^n sum_int [u1^N v^N - phi v^0] - sum_k dt sum_faces |face| [avg(G) avg(v) - avg(f) avg(D_nu v)],
/// where G is the measured flux. Equals sum_k dt sum_int h^n q avg(u1) avg(v).
cplx assemble_q_identity(const Measurement& data, const Slice& phi, const BoundaryTrace& f, const ComplexField& v);
cplx assemble_q_identity(const Measurement& data, const ProbeSolution& u1, const ProbeSolution& v);

// ---- sampling -----------------------------------------------------------------------

/// Probe pair with omega perpendicular to xi: u1 with the discrete phase of lambda omega and the
/// free adjoint probe modulated by e^{i(tau t + xi.x)}. Two or more lambdas: Richardson in 1/lambda
/// on the last two.
cplx sample_q_literal(const QDataSource& src, const std::vector<double>& lambdas, double tau,
                      const std::vector<double>& xi, const SolverOptions& opt = {});

struct QSamplingOptions {
    /// Empty: lambda_ladder(grid).
    std::vector<double> lambdas;
    /// Probe directions per lambda (evenly spaced angles for n = 2, a Fibonacci sphere for n = 3).
    int directions = 96;
    /// Largest accepted wavevector correction.
    double eta_max = 2.0;
    int threads = 1;
};

struct QSamplingReport {
    std::size_t probes = 0;
    std::size_t unreached = 0;
    double max_eta = 0.0;
    double mean_eta = 0.0;
    std::vector<double> lambdas;
};

/// Probe dictionary used by the matched sampler, in a fixed order.
std::vector<ProbeSpec> q_probe_dictionary(const SpaceTimeGrid& g, const QSamplingOptions& opt);
/// Stable file stem of a probe input.
std::string probe_key(const ProbeSpec& spec);

/// Per lattice sample: the dictionary entry and an exact-dispersion wavevector
/// K = lambda omega + s (xi + eta) with theta(K) = theta(lambda omega) + s tau dt and eta parallel to K.
/// choice = -1 marks unreachable samples.
struct LatticeMatch {
    std::vector<int> choice;
    std::vector<std::array<double, 3>> K;
    std::vector<double> eta;
};
LatticeMatch match_lattice(const FourierSampleSet& lattice, const std::vector<ProbeSpec>& dict, double eta_max,
                           int sign, int threads = 1);

/// Every lattice sample from one u1 probe of the dictionary and an exact discrete adjoint wave
/// whose wavevector lambda omega + xi + eta satisfies the discrete dispersion relation for tau.
/// The identity value is divided by the half-level averaging factors and shifted back by e^{-i eta.x_c}.
/// Unreachable samples stay zero with populated = 0.
FourierSampleSet sample_q_matched(const QDataSource& src, const QSamplingOptions& opt, QSamplingReport* report = nullptr);

// ---- inversion ----------------------------------------------------------------------

struct InversionResult {
    Potential q;
    /// ||Im|| / ||Re|| of the inverted field before the real projection.
    double imag_ratio = 0.0;
};

/// Inverse lattice transform, real part, half levels averaged onto full levels.
/// Unpopulated samples are an error unless zero_fill is set.
InversionResult invert_q(const FourierSampleSet& samples, bool zero_fill = false);

struct QErrorReport {
    double l2_rel = 0.0;
    double linf_rel = 0.0;
    double imag_ratio = 0.0;
};

/// Relative L2(Omega_T) and sup errors over all nodes and levels.
QErrorReport q_error(const Potential& recovered, const Potential& truth, double imag_ratio);

}  // namespace dsi
