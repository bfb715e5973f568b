#pragma once

#include <string>

#include "dsi/solver.hpp"

namespace dsi {

/// Final-time state and the lateral conormal flux of one solution.
struct Measurement {
    GridPtr grid;
    /// u(T, .) on every node; consumers use interior nodes only.
    Slice final_state;
    /// D_nu u - nu . J on face nodes, every level. Edge and corner nodes hold 0.
    BoundaryTrace flux;
    double eps = 1.0;
    std::string input_id;

    explicit Measurement(GridPtr g = nullptr);

    /// sqrt(h^n sum_interior |final|^2 + lateral trapezoid of |flux|^2).
    double norm() const;
    Measurement& operator+=(const Measurement& o);
    Measurement& operator*=(cplx s);
};

Measurement operator+(Measurement a, const Measurement& b);
Measurement operator-(Measurement a, const Measurement& b);
Measurement operator*(cplx s, Measurement a);

struct LinearizedPair {
    Measurement g1;
    Measurement g2;
};

/// Outward one-sided flux D_nu u = (u_b - u_{b-1}) / h minus nu . (J_b + J_{b-1}) / 2 on level k.
/// J may be empty (no nonlinearity).
Slice conormal_flux_level(const GridPtr& g, const cplx* u, const VectorSlice* J);
/// Flux trace of a whole solution under the given nonlinearity (null: D_nu u only).
BoundaryTrace conormal_flux(const ComplexField& u, const NonlinearitySpec* nl);

/// Input-output map: nonlinear solve with data (eps phi, eps f), then final state and flux.
Measurement apply_io_map(const Potential& q, const NonlinearitySpec& nl, const Slice& phi, const BoundaryTrace& f,
                         double eps, const PicardOptions& opt = {}, const std::string& input_id = "");

/// Two-point extraction: g1 = (4 L(e) - L(2e)) / (2e), g2 = (L(2e) - 2 L(e)) / (2 e^2).
LinearizedPair extract_linearizations(const Measurement& at_eps, const Measurement& at_2eps);
/// Three-point variant from eps, 2 eps, 3 eps; exact when the map is a cubic polynomial in eps.
LinearizedPair extract_linearizations3(const Measurement& at_eps, const Measurement& at_2eps,
                                       const Measurement& at_3eps);

/// Direct first-order data: u1 final state and D_nu u1.
Measurement lambda_q(const Potential& q, const Slice& phi, const BoundaryTrace& f, const SolverOptions& opt = {});
/// Same from an already computed u1.
Measurement lambda_q_of(const ComplexField& u1);
/// Direct second-order data: u2 final state and D_nu u2 - nu . b |grad u1|^2.
Measurement lambda_b(const Potential& q, const RealVectorField& b, const Slice& phi, const BoundaryTrace& f,
                     bool strict = true, const SolverOptions& opt = {});
Measurement lambda_b_of(const RealVectorField& b, const ComplexField& u1, const ComplexField& u2);

/// `<stem>.json` holds the grid, eps and input_id; `<stem>.bin` holds little-endian f64 (re, im)
/// pairs: the final state on interior nodes, then the flux on face nodes level by level.
void write_measurement(const std::string& stem, const Measurement& m);
Measurement read_measurement(const std::string& stem, const GridPtr& expect = nullptr);

}  // namespace dsi
