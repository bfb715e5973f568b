#include "dsi/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dsi {

SpaceTimeGrid::SpaceTimeGrid(std::vector<int> m_, int nt_, std::vector<double> box_, double T_)
    : n(static_cast<int>(m_.size())), box(std::move(box_)), T(T_), m(std::move(m_)), nt(nt_) {
    if (n < 2 || n > 3) throw GridError("spatial dimension must be 2 or 3");
    if (box.empty()) box.assign(n, 1.0);
    if (static_cast<int>(box.size()) != n) throw GridError("box extents do not match dimension");
    if (nt < 2) throw GridError("need at least 2 time steps");
    if (!(T > 0)) throw GridError("final time must be positive");
    for (int a = 0; a < n; ++a) {
        if (m[a] < 5) throw GridError("need at least 5 nodes per axis");
        if (!(box[a] > 0)) throw GridError("box extents must be positive");
    }
    h.resize(n);
    for (int a = 0; a < n; ++a) h[a] = box[a] / (m[a] - 1);
    dt = T / nt;

    strides_.assign(n, 1);
    for (int a = n - 2; a >= 0; --a) strides_[a] = strides_[a + 1] * m[a + 1];
    nodes_ = strides_[0] * m[0];

    bflag_.assign(nodes_, 0);
    bslot_.assign(nodes_, -1);
    int multi[3];
    for (std::size_t idx = 0; idx < nodes_; ++idx) {
        unravel(idx, multi);
        int c = 0;
        for (int a = 0; a < n; ++a)
            if (multi[a] == 0 || multi[a] == m[a] - 1) ++c;
        bflag_[idx] = static_cast<unsigned char>(c);
        if (c) {
            bslot_[idx] = static_cast<long>(boundary_.size());
            boundary_.push_back(idx);
        } else {
            interior_.push_back(idx);
        }
    }
}

std::size_t SpaceTimeGrid::index(const int* multi) const {
    std::size_t idx = 0;
    for (int a = 0; a < n; ++a) idx += strides_[a] * static_cast<std::size_t>(multi[a]);
    return idx;
}

void SpaceTimeGrid::unravel(std::size_t idx, int* multi) const {
    for (int a = 0; a < n; ++a) {
        multi[a] = static_cast<int>(idx / strides_[a]);
        idx %= strides_[a];
    }
}

double SpaceTimeGrid::cell_volume() const {
    double v = 1.0;
    for (double x : h) v *= x;
    return v;
}

double SpaceTimeGrid::face_measure(int axis) const {
    double v = 1.0;
    for (int a = 0; a < n; ++a)
        if (a != axis) v *= h[a];
    return v;
}

bool SpaceTimeGrid::same_shape(const SpaceTimeGrid& o) const {
    return n == o.n && m == o.m && nt == o.nt && box == o.box && T == o.T;
}

std::string SpaceTimeGrid::describe() const {
    std::ostringstream os;
    os << "grid n=" << n << " m=[";
    for (int a = 0; a < n; ++a) os << (a ? "," : "") << m[a];
    os << "] nt=" << nt << " T=" << T;
    return os.str();
}

GridPtr make_grid(std::vector<int> m, int nt, std::vector<double> box, double T) {
    return std::make_shared<const SpaceTimeGrid>(std::move(m), nt, std::move(box), T);
}

GridPtr make_unit_grid(int n, int m, int nt, double T) {
    return make_grid(std::vector<int>(n, m), nt, std::vector<double>(n, 1.0), T);
}

void require_same_grid(const GridPtr& a, const GridPtr& b, const char* what) {
    if (!a || !b) throw GridError(std::string(what) + ": missing grid");
    if (a != b && !a->same_shape(*b)) throw GridError(std::string(what) + ": grid mismatch");
}

// ---- ComplexField --------------------------------------------------------

ComplexField::ComplexField(GridPtr g) : grid(std::move(g)), data(grid->levels() * grid->nodes()) {}

Slice ComplexField::slice(std::size_t k) const {
    if (k >= grid->levels()) throw GridError("time index out of range");
    return Slice(level(k), level(k) + grid->nodes());
}

void ComplexField::set_slice(std::size_t k, const Slice& s) {
    if (k >= grid->levels() || s.size() != grid->nodes()) throw GridError("bad slice");
    std::copy(s.begin(), s.end(), level(k));
}

bool ComplexField::all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

double ComplexField::l2_norm() const {
    const auto& g = *grid;
    double s = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        double wt = (k == 0 || k == g.levels() - 1) ? 0.5 * g.dt : g.dt;
        const cplx* u = level(k);
        for (std::size_t i = 0; i < g.nodes(); ++i) s += wt * trapezoid_node_weight(g, i) * std::norm(u[i]);
    }
    return std::sqrt(s);
}

double ComplexField::max_abs() const {
    double m = 0.0;
    for (const auto& z : data) m = std::max(m, std::abs(z));
    return m;
}

ComplexField& ComplexField::operator+=(const ComplexField& o) {
    require_same_grid(grid, o.grid, "field add");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
}

ComplexField& ComplexField::operator-=(const ComplexField& o) {
    require_same_grid(grid, o.grid, "field subtract");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
}

ComplexField& ComplexField::operator*=(cplx s) {
    for (auto& z : data) z *= s;
    return *this;
}

ComplexField operator+(ComplexField a, const ComplexField& b) { return a += b; }
ComplexField operator-(ComplexField a, const ComplexField& b) { return a -= b; }
ComplexField operator*(cplx s, ComplexField a) { return a *= s; }

ComplexField conj(const ComplexField& a) {
    ComplexField r = a;
    for (auto& z : r.data) z = std::conj(z);
    return r;
}

// ---- RealField -----------------------------------------------------------

RealField::RealField(GridPtr g) : grid(std::move(g)), data(grid->levels() * grid->nodes(), 0.0) {}

std::vector<double> RealField::half_level(std::size_t k) const {
    std::vector<double> r(grid->nodes());
    const double* a = level(k);
    const double* b = level(k + 1);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = 0.5 * (a[i] + b[i]);
    return r;
}

double RealField::l2_norm() const {
    const auto& g = *grid;
    double s = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        double wt = (k == 0 || k == g.levels() - 1) ? 0.5 * g.dt : g.dt;
        const double* u = level(k);
        for (std::size_t i = 0; i < g.nodes(); ++i) s += wt * trapezoid_node_weight(g, i) * u[i] * u[i];
    }
    return std::sqrt(s);
}

double RealField::max_abs() const {
    double m = 0.0;
    for (double x : data) m = std::max(m, std::abs(x));
    return m;
}

bool RealField::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

RealVectorField::RealVectorField(GridPtr g) : grid(g) {
    for (int a = 0; a < grid->n; ++a) comp.emplace_back(grid);
}

double RealVectorField::l2_norm() const {
    double s = 0.0;
    for (const auto& c : comp) s += std::pow(c.l2_norm(), 2);
    return std::sqrt(s);
}

double RealVectorField::max_abs() const {
    double m = 0.0;
    for (const auto& c : comp) m = std::max(m, c.max_abs());
    return m;
}

// ---- BoundaryTrace -------------------------------------------------------

BoundaryTrace::BoundaryTrace(GridPtr g) : grid(std::move(g)) {
    lateral.assign(grid->levels(), Slice(grid->boundary_nodes().size()));
    final_slice.assign(grid->nodes(), cplx{});
}

BoundaryTrace BoundaryTrace::of(const ComplexField& f) {
    BoundaryTrace tr(f.grid);
    const auto& bn = f.grid->boundary_nodes();
    for (std::size_t k = 0; k < f.grid->levels(); ++k) {
        const cplx* u = f.level(k);
        for (std::size_t s = 0; s < bn.size(); ++s) tr.lateral[k][s] = u[bn[s]];
    }
    tr.final_slice = f.slice(f.grid->levels() - 1);
    return tr;
}

cplx BoundaryTrace::at(std::size_t k, std::size_t node) const {
    long s = grid->boundary_slot(node);
    if (s < 0) throw GridError("node is not on the boundary");
    return lateral[k][static_cast<std::size_t>(s)];
}

// ---- stencils ------------------------------------------------------------

VectorSlice gradient(const GridPtr& gp, const cplx* u) {
    const auto& g = *gp;
    VectorSlice out(g.n, Slice(g.nodes()));
    int multi[3];
    for (std::size_t idx = 0; idx < g.nodes(); ++idx) {
        g.unravel(idx, multi);
        for (int a = 0; a < g.n; ++a) {
            const std::size_t s = g.stride(a);
            const double inv = 1.0 / (2.0 * g.h[a]);
            const int i = multi[a];
            cplx d;
            if (i == 0)
                d = (-3.0 * u[idx] + 4.0 * u[idx + s] - u[idx + 2 * s]) * inv;
            else if (i == g.m[a] - 1)
                d = (3.0 * u[idx] - 4.0 * u[idx - s] + u[idx - 2 * s]) * inv;
            else
                d = (u[idx + s] - u[idx - s]) * inv;
            out[a][idx] = d;
        }
    }
    return out;
}

VectorSlice gradient(const ComplexField& f, std::size_t k) {
    if (k >= f.grid->levels()) throw GridError("time index out of range");
    return gradient(f.grid, f.level(k));
}

Slice gradient_transpose(const GridPtr& gp, const VectorSlice& c) {
    const auto& g = *gp;
    Slice out(g.nodes());
    int multi[3];
    for (std::size_t idx = 0; idx < g.nodes(); ++idx) {
        g.unravel(idx, multi);
        for (int a = 0; a < g.n; ++a) {
            const cplx w = c[a][idx] / (2.0 * g.h[a]);
            if (w == cplx{}) continue;
            const std::size_t s = g.stride(a);
            const int i = multi[a];
            if (i == 0) {
                out[idx] -= 3.0 * w;
                out[idx + s] += 4.0 * w;
                out[idx + 2 * s] -= w;
            } else if (i == g.m[a] - 1) {
                out[idx] += 3.0 * w;
                out[idx - s] -= 4.0 * w;
                out[idx - 2 * s] += w;
            } else {
                out[idx + s] += w;
                out[idx - s] -= w;
            }
        }
    }
    return out;
}

Slice laplacian(const GridPtr& gp, const cplx* u) {
    const auto& g = *gp;
    Slice out(g.nodes());
    for (std::size_t idx : g.interior_nodes()) {
        cplx acc = 0.0;
        for (int a = 0; a < g.n; ++a) {
            const std::size_t s = g.stride(a);
            acc += (u[idx + s] - 2.0 * u[idx] + u[idx - s]) / (g.h[a] * g.h[a]);
        }
        out[idx] = acc;
    }
    return out;
}

Slice laplacian(const ComplexField& f, std::size_t k) {
    if (k >= f.grid->levels()) throw GridError("time index out of range");
    return laplacian(f.grid, f.level(k));
}

// ---- quadrature ------------------------------------------------------------

double trapezoid_node_weight(const SpaceTimeGrid& g, std::size_t idx) {
    int multi[3];
    g.unravel(idx, multi);
    double w = 1.0;
    for (int a = 0; a < g.n; ++a) {
        const bool end = multi[a] == 0 || multi[a] == g.m[a] - 1;
        w *= end ? 0.5 * g.h[a] : g.h[a];
    }
    return w;
}

cplx quadrature_spacetime(const ComplexField& f) {
    const auto& g = *f.grid;
    std::vector<double> w(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) w[i] = trapezoid_node_weight(g, i);
    cplx s = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const double wt = (k == 0 || k == g.levels() - 1) ? 0.5 * g.dt : g.dt;
        const cplx* u = f.level(k);
        cplx acc = 0.0;
        for (std::size_t i = 0; i < g.nodes(); ++i) acc += w[i] * u[i];
        s += wt * acc;
    }
    return s;
}

cplx quadrature_lateral(const BoundaryTrace& tr) {
    const auto& g = *tr.grid;
    const auto& bn = g.boundary_nodes();
    std::vector<double> w(bn.size(), 0.0);
    int multi[3];
    for (std::size_t s = 0; s < bn.size(); ++s) {
        g.unravel(bn[s], multi);
        for (int a = 0; a < g.n; ++a) {
            if (multi[a] != 0 && multi[a] != g.m[a] - 1) continue;
            double fw = 1.0;
            for (int c = 0; c < g.n; ++c) {
                if (c == a) continue;
                const bool end = multi[c] == 0 || multi[c] == g.m[c] - 1;
                fw *= end ? 0.5 * g.h[c] : g.h[c];
            }
            // a node at both ends of a degenerate axis cannot occur (m >= 5)
            w[s] += fw;
        }
    }
    cplx total = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const double wt = (k == 0 || k == g.levels() - 1) ? 0.5 * g.dt : g.dt;
        cplx acc = 0.0;
        for (std::size_t s = 0; s < bn.size(); ++s) acc += w[s] * tr.lateral[k][s];
        total += wt * acc;
    }
    return total;
}

double relative_l2(const RealField& approx, const RealField& ref) {
    require_same_grid(approx.grid, ref.grid, "relative_l2");
    RealField d = approx;
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= ref.data[i];
    const double r = ref.l2_norm();
    return r > 0 ? d.l2_norm() / r : d.l2_norm();
}

double relative_l2(const RealVectorField& approx, const RealVectorField& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < ref.comp.size(); ++a) {
        RealField d = approx.comp[a];
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= ref.comp[a].data[i];
        num += std::pow(d.l2_norm(), 2);
        den += std::pow(ref.comp[a].l2_norm(), 2);
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace dsi
