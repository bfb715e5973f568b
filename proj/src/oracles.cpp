#include "dsi/oracles.hpp"

#include <cmath>

namespace dsi {

namespace {

constexpr cplx I1{0.0, 1.0};

void node_coords(const SpaceTimeGrid& g, std::size_t idx, double* x) {
    int multi[3];
    g.unravel(idx, multi);
    for (int a = 0; a < g.n; ++a) x[a] = g.coord(a, multi[a]);
}

}  // namespace

ComplexField sample_field(const GridPtr& g, const StFunc& u) {
    ComplexField out(g);
    double x[3];
    for (std::size_t k = 0; k < g->levels(); ++k) {
        const double t = g->time(static_cast<int>(k));
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            node_coords(*g, i, x);
            out.at(k, i) = u(t, x);
        }
    }
    return out;
}

ManufacturedProblem manufactured_problem(const GridPtr& g, const StFunc& u, const StFunc& u_t, const StFunc& lap_u,
                                         const Potential& q) {
    require_same_grid(q.grid, g, "manufactured potential");
    ManufacturedProblem mp;
    mp.exact = sample_field(g, u);
    mp.phi = mp.exact.slice(0);
    mp.f = BoundaryTrace::of(mp.exact);
    mp.F = ComplexField(g);
    double x[3];
    for (std::size_t k = 0; k < g->levels(); ++k) {
        const double t = g->time(static_cast<int>(k));
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            node_coords(*g, i, x);
            mp.F.at(k, i) = I1 * u_t(t, x) + lap_u(t, x) + q.at(k, i) * u(t, x);
        }
    }
    return mp;
}

cplx q_identity_interior(const Potential& q, const ComplexField& u1, const ComplexField& v) {
    const auto& g = *u1.grid;
    const double w = g.dt * g.cell_volume();
    cplx s = 0.0;
    for (std::size_t k = 0; k + 1 < g.levels(); ++k) {
        for (std::size_t idx : g.interior_nodes()) {
            const double qh = 0.5 * (q.at(k, idx) + q.at(k + 1, idx));
            const cplx ua = 0.5 * (u1.at(k, idx) + u1.at(k + 1, idx));
            const cplx va = 0.5 * (v.at(k, idx) + v.at(k + 1, idx));
            s += w * qh * ua * va;
        }
    }
    return s;
}

cplx b_identity_interior(const RealVectorField& b, const ComplexField& ua, const ComplexField& ub,
                         const ComplexField& v) {
    GridPtr gp = ua.grid;
    const auto& g = *gp;
    const int n = g.n;
    // J on every level
    std::vector<VectorSlice> J(g.levels());
    for (std::size_t k = 0; k < g.levels(); ++k) {
        VectorSlice pa = gradient(ua, k), pb = gradient(ub, k);
        J[k].assign(n, Slice(g.nodes()));
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            cplx dot = 0.0;
            for (int a = 0; a < n; ++a) dot += pa[a][i] * std::conj(pb[a][i]);
            for (int a = 0; a < n; ++a) J[k][a][i] = b.comp[a].at(k, i) * dot;
        }
    }
    const double w = g.dt * g.cell_volume();
    cplx s = 0.0;
    int multi[3];
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        g.unravel(i, multi);
        for (int a = 0; a < n; ++a) {
            if (multi[a] == g.m[a] - 1) continue;
            bool tangential_interior = true;
            for (int c = 0; c < n; ++c)
                if (c != a && (multi[c] == 0 || multi[c] == g.m[c] - 1)) tangential_interior = false;
            if (!tangential_interior) continue;
            const std::size_t j = i + g.stride(a);
            for (std::size_t k = 0; k + 1 < g.levels(); ++k) {
                const cplx F = 0.25 * (J[k][a][i] + J[k][a][j] + J[k + 1][a][i] + J[k + 1][a][j]);
                const cplx dv = 0.5 * (v.at(k, j) + v.at(k + 1, j) - v.at(k, i) - v.at(k + 1, i)) / g.h[a];
                s += w * F * dv;
            }
        }
    }
    return s;
}

cplx b_integrand_trapezoid(const RealVectorField& b, const ComplexField& u1, const ComplexField& v) {
    GridPtr g = u1.grid;
    ComplexField integrand(g);
    for (std::size_t k = 0; k < g->levels(); ++k) {
        VectorSlice pu = gradient(u1, k), pv = gradient(v, k);
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            double mag = 0.0;
            cplx bv = 0.0;
            for (int a = 0; a < g->n; ++a) {
                mag += std::norm(pu[a][i]);
                bv += b.comp[a].at(k, i) * pv[a][i];
            }
            integrand.at(k, i) = bv * mag;
        }
    }
    return quadrature_spacetime(integrand);
}

}  // namespace dsi

namespace dsi {

double Factor1D::eval(double s) const {
    switch (kind) {
        case Kind::constant: return 1.0;
        case Kind::gaussian: return std::exp(-(s - a) * (s - a) / (2.0 * b * b));
        case Kind::cosine: return std::cos(a * s + b);
    }
    return 0.0;
}

namespace {

/// int_0^L e^{i w s} ds
cplx window_exp(double w, double L) {
    if (std::abs(w * L) < 1e-12) return L;
    return (std::polar(1.0, w * L) - 1.0) / cplx(0.0, w);
}

}  // namespace

cplx Factor1D::transform(double w, double L) const {
    switch (kind) {
        case Kind::constant: return window_exp(w, L);
        case Kind::gaussian: return std::sqrt(2.0 * M_PI) * b * std::exp(-0.5 * b * b * w * w) * std::polar(1.0, w * a);
        case Kind::cosine:
            return 0.5 * (std::polar(1.0, b) * window_exp(w + a, L) + std::polar(1.0, -b) * window_exp(w - a, L));
    }
    return 0.0;
}

double FieldDescriptor::eval(double t, const double* x) const {
    double s = 0.0;
    for (const auto& term : terms) {
        double v = term.amplitude * term.time.eval(t);
        for (std::size_t a = 0; a < term.space.size(); ++a) v *= term.space[a].eval(x[a]);
        s += v;
    }
    return s;
}

RealField FieldDescriptor::sample(const GridPtr& gp) const {
    const auto& g = *gp;
    RealField f(gp);
    int multi[3];
    double x[3];
    for (std::size_t k = 0; k < g.levels(); ++k)
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            g.unravel(i, multi);
            for (int a = 0; a < g.n; ++a) x[a] = g.coord(a, multi[a]);
            f.at(k, i) = eval(g.time(static_cast<int>(k)), x);
        }
    return f;
}

FourierSampleSet analytic_fourier(const FieldDescriptor& d, const GridPtr& gp) {
    const auto& g = *gp;
    FourierSampleSet s(gp);
    for (const auto& term : d.terms)
        if (static_cast<int>(term.space.size()) != g.n) throw GridError("field descriptor dimension mismatch");
    int multi[3];
    for (std::size_t idx = 0; idx < s.size(); ++idx) {
        g.unravel(idx % g.nodes(), multi);
        const double tau = s.tau(idx);
        cplx v{};
        for (const auto& term : d.terms) {
            cplx p = term.amplitude * term.time.transform(tau, g.T);
            for (int a = 0; a < g.n; ++a) p *= term.space[a].transform(lattice_xi(g, a, multi[a]), g.m[a] * g.h[a]);
            v += p;
        }
        s.values[idx] = v;
        s.populated[idx] = 1;
    }
    return s;
}

FieldDescriptor q_bench_descriptor(const SpaceTimeGrid& g, double amplitude) {
    SeparableTerm t;
    t.amplitude = amplitude;
    t.time = {Factor1D::Kind::gaussian, 0.5 * g.T, 0.15 * g.T};
    for (int a = 0; a < g.n; ++a) t.space.push_back({Factor1D::Kind::gaussian, 0.5 * g.box[a], 0.12 * g.box[a]});
    return FieldDescriptor{{t}};
}

Potential q_bench(const GridPtr& g, double amplitude) { return q_bench_descriptor(*g, amplitude).sample(g); }

RealVectorField b_bench(const GridPtr& gp, double amplitude) {
    const auto& g = *gp;
    RealVectorField b(gp);
    int multi[3];
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const double tf = 1.0 + 0.25 * std::sin(M_PI * g.time(static_cast<int>(k)) / g.T);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            g.unravel(i, multi);
            double r2 = 0.0;
            for (int a = 0; a < g.n; ++a) {
                const double d = (g.coord(a, multi[a]) - 0.5 * g.box[a]) / g.box[a];
                r2 += d * d;
            }
            const double env = amplitude * tf * std::exp(-r2 / (2.0 * 0.15 * 0.15));
            const double th = M_PI * (g.coord(0, multi[0]) / g.box[0] - 0.5);
            b.comp[0].at(k, i) = env * std::cos(th);
            b.comp[1].at(k, i) = env * std::sin(th);
            if (g.n == 3) b.comp[2].at(k, i) = 0.5 * env * std::sin(th);
        }
    }
    return b;
}

}  // namespace dsi
