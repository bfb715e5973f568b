#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsi {

using cplx = std::complex<double>;
using Slice = std::vector<cplx>;

class GridError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform node-centred discretisation of (0,T) x box.
/// Nodes along axis a sit at i*h[a], i = 0..m[a]-1; time levels at k*dt, k = 0..nt.
class SpaceTimeGrid {
public:
    SpaceTimeGrid(std::vector<int> m, int nt, std::vector<double> box = {}, double T = 1.0);

    int n = 0;
    std::vector<double> box;
    double T = 1.0;
    std::vector<int> m;
    int nt = 0;
    std::vector<double> h;
    double dt = 0.0;

    std::size_t nodes() const { return nodes_; }
    std::size_t levels() const { return static_cast<std::size_t>(nt) + 1; }
    std::size_t stride(int axis) const { return strides_[axis]; }

    std::size_t index(const int* multi) const;
    void unravel(std::size_t idx, int* multi) const;
    double coord(int axis, int i) const { return i * h[axis]; }
    double time(int k) const { return k * dt; }

    /// Node lies on at least one box face.
    bool is_boundary(std::size_t idx) const { return bflag_[idx] != 0; }
    /// Number of axes along which the node sits on a face (0 interior, 1 face, >1 edge/corner).
    int face_count(std::size_t idx) const { return bflag_[idx]; }

    const std::vector<std::size_t>& boundary_nodes() const { return boundary_; }
    const std::vector<std::size_t>& interior_nodes() const { return interior_; }
    /// Position of a node inside boundary_nodes(), or -1.
    long boundary_slot(std::size_t idx) const { return bslot_[idx]; }

    /// Product of spacings, the cell measure h^n.
    double cell_volume() const;
    /// Measure of a cell face normal to `axis`.
    double face_measure(int axis) const;

    bool same_shape(const SpaceTimeGrid& o) const;
    std::string describe() const;

private:
    std::size_t nodes_ = 0;
    std::vector<std::size_t> strides_;
    std::vector<unsigned char> bflag_;
    std::vector<std::size_t> boundary_;
    std::vector<std::size_t> interior_;
    std::vector<long> bslot_;
};

using GridPtr = std::shared_ptr<const SpaceTimeGrid>;

GridPtr make_grid(std::vector<int> m, int nt, std::vector<double> box = {}, double T = 1.0);
/// n-dimensional unit box with the same node count on every axis.
GridPtr make_unit_grid(int n, int m, int nt, double T = 1.0);

void require_same_grid(const GridPtr& a, const GridPtr& b, const char* what);

/// Complex scalar on every (time level, node); time-major storage.
class ComplexField {
public:
    ComplexField() = default;
    explicit ComplexField(GridPtr g);

    GridPtr grid;
    std::vector<cplx> data;

    cplx* level(std::size_t k) { return data.data() + k * grid->nodes(); }
    const cplx* level(std::size_t k) const { return data.data() + k * grid->nodes(); }
    cplx& at(std::size_t k, std::size_t idx) { return data[k * grid->nodes() + idx]; }
    cplx at(std::size_t k, std::size_t idx) const { return data[k * grid->nodes() + idx]; }
    Slice slice(std::size_t k) const;
    void set_slice(std::size_t k, const Slice& s);

    bool all_finite() const;
    /// Discrete L2(Omega_T) norm with trapezoid weights.
    double l2_norm() const;
    double max_abs() const;

    ComplexField& operator+=(const ComplexField& o);
    ComplexField& operator-=(const ComplexField& o);
    ComplexField& operator*=(cplx s);
};

ComplexField operator+(ComplexField a, const ComplexField& b);
ComplexField operator-(ComplexField a, const ComplexField& b);
ComplexField operator*(cplx s, ComplexField a);
ComplexField conj(const ComplexField& a);

/// Real scalar on every (time level, node). Used for q and the components of b.
class RealField {
public:
    RealField() = default;
    explicit RealField(GridPtr g);

    GridPtr grid;
    std::vector<double> data;

    double* level(std::size_t k) { return data.data() + k * grid->nodes(); }
    const double* level(std::size_t k) const { return data.data() + k * grid->nodes(); }
    double& at(std::size_t k, std::size_t idx) { return data[k * grid->nodes() + idx]; }
    double at(std::size_t k, std::size_t idx) const { return data[k * grid->nodes() + idx]; }

    /// Average of levels k and k+1.
    std::vector<double> half_level(std::size_t k) const;
    double l2_norm() const;
    double max_abs() const;
    bool all_finite() const;
};

using Potential = RealField;

/// n real components sharing one grid (the coefficient b).
struct RealVectorField {
    GridPtr grid;
    std::vector<RealField> comp;

    RealVectorField() = default;
    explicit RealVectorField(GridPtr g);
    double l2_norm() const;
    double max_abs() const;
};

/// Per-component values on one time level.
using VectorSlice = std::vector<Slice>;

/// Values on every boundary node for all levels, plus a final-time slice over all nodes.
class BoundaryTrace {
public:
    BoundaryTrace() = default;
    explicit BoundaryTrace(GridPtr g);

    GridPtr grid;
    /// lateral[k][s] is the value at boundary_nodes()[s] on level k.
    std::vector<Slice> lateral;
    Slice final_slice;

    static BoundaryTrace of(const ComplexField& f);
    cplx at(std::size_t k, std::size_t node) const;
};

// ---- stencils ----------------------------------------------------------

/// Second-order central differences inside, second-order one-sided on faces.
VectorSlice gradient(const GridPtr& g, const cplx* slice);
VectorSlice gradient(const ComplexField& f, std::size_t k);
/// Transpose of `gradient`: sum_a sum_i c_a[i] grad_a(u)[i] = sum_i out[i] u[i].
Slice gradient_transpose(const GridPtr& g, const VectorSlice& c);

/// Standard (2n+1)-point Laplacian on interior nodes; zero on boundary nodes.
Slice laplacian(const GridPtr& g, const cplx* slice);
Slice laplacian(const ComplexField& f, std::size_t k);

// ---- quadrature --------------------------------------------------------

/// Composite trapezoid weight of a node over the box (product of 1-D weights).
double trapezoid_node_weight(const SpaceTimeGrid& g, std::size_t idx);
/// Composite trapezoid rule over Omega_T.
cplx quadrature_spacetime(const ComplexField& f);
/// Composite trapezoid rule over the lateral boundary; edge and corner nodes collect
/// the product-rule weight from every face they lie on.
cplx quadrature_lateral(const BoundaryTrace& tr);

/// Real-part L2(Omega_T) distance relative to the reference norm.
double relative_l2(const RealField& approx, const RealField& ref);
double relative_l2(const RealVectorField& approx, const RealVectorField& ref);

}  // namespace dsi
