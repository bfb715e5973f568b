#include "dsi/solver.hpp"

#include "dsi/fft.hpp"

#include <fftw3.h>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <mutex>

namespace dsi {

std::mutex& fftw_planner_mutex() {
    static std::mutex mu;
    return mu;
}

namespace {

constexpr cplx I1{0.0, 1.0};

}  // namespace

// ---- nonlinearity ------------------------------------------------------------

bool NonlinearitySpec::active() const {
    if (remainder == RemainderKind::cubic_flat && c != 0.0) return true;
    return b.grid && b.max_abs() > 0.0;
}

double flat_profile(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }

std::vector<cplx> remainder_value(const NonlinearitySpec& nl, double t, const cplx* p) {
    const std::size_t n = nl.b.grid ? static_cast<std::size_t>(nl.b.grid->n) : 0;
    std::vector<cplx> r(n, cplx{});
    if (nl.remainder != RemainderKind::cubic_flat || nl.c == 0.0) return r;
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) s += std::norm(p[a]);
    const double f = nl.c * flat_profile(t) * s;
    for (std::size_t a = 0; a < n; ++a) r[a] = f * p[a];
    return r;
}

VectorSlice nonlinear_flux(const NonlinearitySpec& nl, const GridPtr& g, const cplx* u, std::size_t k) {
    const int n = g->n;
    VectorSlice J(n, Slice(g->nodes()));
    if (!nl.b.grid) return J;
    VectorSlice p = gradient(g, u);
    const bool cubic = nl.remainder == RemainderKind::cubic_flat && nl.c != 0.0;
    const double mu = cubic ? nl.c * flat_profile(g->time(static_cast<int>(k))) : 0.0;
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += std::norm(p[a][i]);
        for (int a = 0; a < n; ++a) {
            cplx v = nl.b.comp[a].at(k, i) * s;
            if (cubic) v += mu * s * p[a][i];
            J[a][i] = v;
        }
    }
    return J;
}

Slice flux_divergence(const GridPtr& gp, const VectorSlice& J) {
    const auto& g = *gp;
    Slice out(g.nodes());
    for (std::size_t idx : g.interior_nodes()) {
        cplx acc = 0.0;
        for (int a = 0; a < g.n; ++a) {
            const std::size_t s = g.stride(a);
            acc += (J[a][idx + s] - J[a][idx - s]) / (2.0 * g.h[a]);
        }
        out[idx] = acc;
    }
    return out;
}

Potential zero_potential(const GridPtr& g) { return Potential(g); }

void check_potential(const Potential& q, const GridPtr& g) {
    require_same_grid(q.grid, g, "potential");
    if (!q.all_finite()) throw SolverError("potential has non-finite values");
}

// ---- propagator ----------------------------------------------------------------

struct CnPropagator::Impl {
    const SpaceTimeGrid* g = nullptr;
    int n = 0;
    std::vector<int> dims;
    std::size_t nint = 0;
    std::vector<std::size_t> int2node;
    std::vector<double> mu;
    double norm = 1.0;
    double* buf = nullptr;
    fftw_plan plan = nullptr;
    std::vector<cplx> r_int, w_int, t_int;

    // direct-path cache
    std::vector<double> cached_q;
    int cached_sign = 0;
    std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<cplx>>> lu;

    explicit Impl(const SpaceTimeGrid& grid) : g(&grid), n(grid.n) {
        dims.resize(n);
        nint = 1;
        for (int a = 0; a < n; ++a) {
            dims[a] = grid.m[a] - 2;
            nint *= static_cast<std::size_t>(dims[a]);
        }
        int2node = grid.interior_nodes();
        mu.assign(nint, 0.0);
        std::vector<int> j(n, 0);
        for (std::size_t p = 0; p < nint; ++p) {
            std::size_t rem = p;
            for (int a = n - 1; a >= 0; --a) {
                j[a] = static_cast<int>(rem % dims[a]);
                rem /= dims[a];
            }
            double s = 0.0;
            for (int a = 0; a < n; ++a) {
                const double sn = std::sin(M_PI * (j[a] + 1) / (2.0 * (dims[a] + 1)));
                s -= 4.0 / (grid.h[a] * grid.h[a]) * sn * sn;
            }
            mu[p] = s;
        }
        norm = 1.0;
        for (int a = 0; a < n; ++a) norm *= 2.0 * (dims[a] + 1);
        r_int.resize(nint);
        w_int.resize(nint);
        t_int.resize(nint);
        std::lock_guard<std::mutex> lk(fftw_planner_mutex());
        buf = static_cast<double*>(fftw_malloc(sizeof(double) * 2 * nint));
        std::vector<fftw_r2r_kind> kinds(n, FFTW_RODFT00);
        plan = fftw_plan_many_r2r(n, dims.data(), 2, buf, nullptr, 2, 1, buf, nullptr, 2, 1, kinds.data(),
                                  FFTW_ESTIMATE);
        if (!plan) throw SolverError("FFT plan creation failed");
    }

    ~Impl() {
        std::lock_guard<std::mutex> lk(fftw_planner_mutex());
        if (plan) fftw_destroy_plan(plan);
        if (buf) fftw_free(buf);
    }

    /// out = P^{-1} in, P = s i/dt + Lap/2 (interior packing).
    void apply_pinv(const cplx* in, cplx* out, int sign) {
        const double idt = 1.0 / g->dt;
        for (std::size_t p = 0; p < nint; ++p) {
            buf[2 * p] = in[p].real();
            buf[2 * p + 1] = in[p].imag();
        }
        fftw_execute(plan);
        for (std::size_t p = 0; p < nint; ++p) {
            const cplx d = cplx(0.5 * mu[p], double(sign) * idt) * norm;
            const cplx z = cplx(buf[2 * p], buf[2 * p + 1]) / d;
            buf[2 * p] = z.real();
            buf[2 * p + 1] = z.imag();
        }
        fftw_execute(plan);
        for (std::size_t p = 0; p < nint; ++p) out[p] = cplx(buf[2 * p], buf[2 * p + 1]);
    }

    void build_direct(const std::vector<double>& qi, int sign) {
        using Trip = Eigen::Triplet<cplx>;
        std::vector<Trip> trips;
        trips.reserve(nint * (2 * n + 1));
        std::vector<long> node2int(g->nodes(), -1);
        for (std::size_t p = 0; p < nint; ++p) node2int[int2node[p]] = static_cast<long>(p);
        const double idt = 1.0 / g->dt;
        for (std::size_t p = 0; p < nint; ++p) {
            const std::size_t idx = int2node[p];
            double diag = 0.0;
            for (int a = 0; a < n; ++a) {
                const double c = 0.5 / (g->h[a] * g->h[a]);
                diag -= 2.0 * c;
                for (int sgn : {-1, 1}) {
                    const std::size_t nb = sgn > 0 ? idx + g->stride(a) : idx - g->stride(a);
                    const long q = node2int[nb];
                    if (q >= 0) trips.emplace_back(static_cast<int>(p), static_cast<int>(q), cplx(c, 0.0));
                }
            }
            trips.emplace_back(static_cast<int>(p), static_cast<int>(p), cplx(diag + 0.5 * qi[p], sign * idt));
        }
        Eigen::SparseMatrix<cplx> A(static_cast<int>(nint), static_cast<int>(nint));
        A.setFromTriplets(trips.begin(), trips.end());
        lu = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<cplx>>>();
        lu->compute(A);
        if (lu->info() != Eigen::Success) throw SolverError("step matrix factorisation failed");
        cached_q = qi;
        cached_sign = sign;
    }
};

CnPropagator::CnPropagator(GridPtr g, SolverOptions opt)
    : grid_(std::move(g)), opt_(opt), impl_(std::make_unique<Impl>(*grid_)) {}

CnPropagator::~CnPropagator() = default;

void CnPropagator::solve_system(const double* qhalf, const cplx* r, cplx* w, int sign) {
    Impl& im = *impl_;
    const std::size_t nint = im.nint;
    double qmax = 0.0;
    std::vector<double> qi(nint, 0.0);
    if (qhalf) {
        for (std::size_t p = 0; p < nint; ++p) {
            qi[p] = qhalf[im.int2node[p]];
            qmax = std::max(qmax, std::abs(qi[p]));
        }
    }
    for (std::size_t p = 0; p < nint; ++p) im.r_int[p] = r[im.int2node[p]];

    const double rho = qmax * grid_->dt / 2.0;
    if (opt_.force_direct || rho >= opt_.direct_threshold) {
        if (!im.lu || im.cached_sign != sign || im.cached_q != qi) im.build_direct(qi, sign);
        Eigen::Map<const Eigen::VectorXcd> rv(im.r_int.data(), static_cast<long>(nint));
        Eigen::VectorXcd sol = im.lu->solve(rv);
        if (im.lu->info() != Eigen::Success) throw SolverError("step system solve failed");
        for (std::size_t p = 0; p < nint; ++p) w[im.int2node[p]] = sol[static_cast<long>(p)];
        ++direct_steps_;
        return;
    }

    im.apply_pinv(im.r_int.data(), im.w_int.data(), sign);
    if (qmax > 0.0) {
        const double target = 1e-2 * opt_.solver_tol;
        bool ok = false;
        for (int it = 0; it < opt_.max_sweeps; ++it) {
            for (std::size_t p = 0; p < nint; ++p) im.t_int[p] = im.r_int[p] - 0.5 * qi[p] * im.w_int[p];
            im.apply_pinv(im.t_int.data(), im.t_int.data(), sign);
            double inc = 0.0, mag = 0.0;
            for (std::size_t p = 0; p < nint; ++p) {
                inc = std::max(inc, std::abs(im.t_int[p] - im.w_int[p]));
                mag = std::max(mag, std::abs(im.t_int[p]));
            }
            std::swap(im.t_int, im.w_int);
            if (inc <= target * mag || mag == 0.0) {
                ok = true;
                break;
            }
        }
        if (!ok) throw SolverError("step iteration did not converge");
    }
    for (std::size_t p = 0; p < nint; ++p) w[im.int2node[p]] = im.w_int[p];
}

void CnPropagator::step(const cplx* cur, cplx* next, const double* qhalf, const cplx* src, int sign) {
    const auto& g = *grid_;
    const double idt = 1.0 / g.dt;
    for (std::size_t idx : g.interior_nodes()) next[idx] = 0.0;
    Slice lb = laplacian(grid_, next);
    Slice lc = laplacian(grid_, cur);
    Slice rhs(g.nodes());
    for (std::size_t idx : g.interior_nodes()) {
        const double qv = qhalf ? qhalf[idx] : 0.0;
        cplx r = double(sign) * I1 * idt * cur[idx] - 0.5 * lc[idx] - 0.5 * qv * cur[idx] - 0.5 * lb[idx];
        if (src) r += src[idx];
        rhs[idx] = r;
    }
    solve_system(qhalf, rhs.data(), next, sign);
}

// ---- solves --------------------------------------------------------------------

namespace {

void check_compat(const Slice& phi, const BoundaryTrace& f) {
    const auto& g = *f.grid;
    const auto& bn = g.boundary_nodes();
    double scale = 1.0, gap = 0.0;
    for (std::size_t s = 0; s < bn.size(); ++s) {
        scale = std::max(scale, std::abs(phi[bn[s]]));
        gap = std::max(gap, std::abs(phi[bn[s]] - f.lateral[0][s]));
    }
    if (gap > 1e-12 * scale) throw SolverError("initial data does not match boundary data at t = 0");
}

}  // namespace

ComplexField solve_ibvp(const Potential& q, const Slice& phi, const BoundaryTrace& f, const ComplexField* F,
                        int sign, const SolverOptions& opt) {
    GridPtr g = f.grid;
    check_potential(q, g);
    if (phi.size() != g->nodes()) throw SolverError("initial slice has wrong size");
    if (F) require_same_grid(F->grid, g, "source");
    check_compat(phi, f);
    CnPropagator prop(g, opt);
    ComplexField u(g);
    u.set_slice(0, phi);
    const auto& bn = g->boundary_nodes();
    Slice src(g->nodes());
    for (std::size_t k = 0; k + 1 < g->levels(); ++k) {
        cplx* next = u.level(k + 1);
        for (std::size_t s = 0; s < bn.size(); ++s) next[bn[s]] = f.lateral[k + 1][s];
        std::vector<double> qh = q.half_level(k);
        const cplx* sp = nullptr;
        if (F) {
            const cplx* a = F->level(k);
            const cplx* b = F->level(k + 1);
            for (std::size_t i = 0; i < g->nodes(); ++i) src[i] = 0.5 * (a[i] + b[i]);
            sp = src.data();
        }
        prop.step(u.level(k), next, qh.data(), sp, sign);
    }
    if (!u.all_finite()) throw SolverError("solution has non-finite values");
    return u;
}

ComplexField solve_linear(const Potential& q, const Slice& phi, const BoundaryTrace& f, const SolverOptions& opt) {
    return solve_ibvp(q, phi, f, nullptr, +1, opt);
}

ComplexField solve_source(const Potential& q, const ComplexField& F, const SolverOptions& opt) {
    const auto& g = *F.grid;
    double fmax = 1.0, f0 = 0.0;
    for (const auto& z : F.data) fmax = std::max(fmax, std::abs(z));
    for (std::size_t i = 0; i < g.nodes(); ++i) f0 = std::max(f0, std::abs(F.at(0, i)));
    if (f0 > 1e-12 * fmax) throw SolverError("source must vanish at t = 0");
    BoundaryTrace zero(F.grid);
    return solve_ibvp(q, Slice(g.nodes()), zero, &F, +1, opt);
}

ComplexField quadratic_source(const RealVectorField& b, const ComplexField& u1) {
    require_same_grid(b.grid, u1.grid, "quadratic source");
    NonlinearitySpec nl;
    nl.b = b;
    ComplexField F(u1.grid);
    for (std::size_t k = 0; k < u1.grid->levels(); ++k) {
        VectorSlice J = nonlinear_flux(nl, u1.grid, u1.level(k), k);
        F.set_slice(k, flux_divergence(u1.grid, J));
    }
    return F;
}

ComplexField compute_u2(const Potential& q, const RealVectorField& b, const ComplexField& u1, bool strict,
                        const SolverOptions& opt) {
    ComplexField F = quadratic_source(b, u1);
    if (strict) return solve_source(q, F, opt);
    BoundaryTrace zero(u1.grid);
    return solve_ibvp(q, Slice(u1.grid->nodes()), zero, &F, +1, opt);
}

ComplexField solve_adjoint(const Potential& q, const Slice& phi, const BoundaryTrace& f, const SolverOptions& opt) {
    Slice cphi(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i) cphi[i] = std::conj(phi[i]);
    BoundaryTrace cf = f;
    for (auto& lv : cf.lateral)
        for (auto& z : lv) z = std::conj(z);
    for (auto& z : cf.final_slice) z = std::conj(z);
    return conj(solve_linear(q, cphi, cf, opt));
}

double sup_l2(const ComplexField& u) {
    const auto& g = *u.grid;
    std::vector<double> w(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) w[i] = trapezoid_node_weight(g, i);
    double best = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const cplx* a = u.level(k);
        double s = 0.0;
        for (std::size_t i = 0; i < g.nodes(); ++i) s += w[i] * std::norm(a[i]);
        best = std::max(best, std::sqrt(s));
    }
    return best;
}

namespace {

ComplexField flux_source(const NonlinearitySpec& nl, const ComplexField& u) {
    ComplexField F(u.grid);
    for (std::size_t k = 0; k < u.grid->levels(); ++k)
        F.set_slice(k, flux_divergence(u.grid, nonlinear_flux(nl, u.grid, u.level(k), k)));
    return F;
}

}  // namespace

NonlinearResult solve_nonlinear_report(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                       const BoundaryTrace& f, double eps, const PicardOptions& opt) {
    if (!(eps > 0.0)) throw SolverError("eps must be positive");
    GridPtr g = f.grid;
    if (nl.b.grid) require_same_grid(nl.b.grid, g, "nonlinearity");
    Slice ephi = phi;
    for (auto& z : ephi) z *= eps;
    BoundaryTrace ef = f;
    for (auto& lv : ef.lateral)
        for (auto& z : lv) z *= eps;

    NonlinearResult res;
    res.u = solve_ibvp(q, ephi, ef, nullptr, +1, opt.solver);
    if (!nl.active()) {
        res.report.iterations = 1;
        res.report.increments.push_back(0.0);
        res.report.converged = true;
        res.report.residual = cn_residual(q, res.u, nullptr, +1);
        return res;
    }
    for (int it = 1; it <= opt.max_iter; ++it) {
        ComplexField F = flux_source(nl, res.u);
        ComplexField next;
        try {
            next = solve_ibvp(q, ephi, ef, &F, +1, opt.solver);
        } catch (const SolverError&) {
            res.report.iterations = it;
            res.report.converged = false;
            res.report.increments.push_back(INFINITY);
            break;
        }
        const double inc = sup_l2(next - res.u);
        res.u = std::move(next);
        res.report.iterations = it;
        res.report.increments.push_back(inc);
        if (!std::isfinite(inc)) break;
        if (inc < opt.picard_tol) {
            res.report.converged = true;
            break;
        }
        const auto& incs = res.report.increments;
        if (incs.size() >= 3 && inc > 1e3 * incs.front()) break;  // clearly diverging
    }
    res.report.residual = res.u.all_finite() ? nonlinear_residual(q, nl, res.u) : INFINITY;
    return res;
}

NonlinearResult solve_nonlinear(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                const BoundaryTrace& f, double eps, const PicardOptions& opt) {
    NonlinearResult r = solve_nonlinear_report(q, nl, phi, f, eps, opt);
    if (!r.report.converged)
        throw SolverError("Picard iteration did not converge; eps is too large for this data");
    return r;
}

double cn_residual(const Potential& q, const ComplexField& u, const ComplexField* F, int sign) {
    const auto& g = *u.grid;
    const double idt = 1.0 / g.dt;
    const double w = g.cell_volume() * g.dt;
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < g.levels(); ++k) {
        Slice la = laplacian(u.grid, u.level(k));
        Slice lb = laplacian(u.grid, u.level(k + 1));
        std::vector<double> qh = q.half_level(k);
        for (std::size_t idx : g.interior_nodes()) {
            const cplx a = u.at(k, idx), b = u.at(k + 1, idx);
            cplx r = double(sign) * I1 * (b - a) * idt + 0.5 * (la[idx] + lb[idx]) + 0.5 * qh[idx] * (a + b);
            if (F) r -= 0.5 * (F->at(k, idx) + F->at(k + 1, idx));
            s += w * std::norm(r);
        }
    }
    return std::sqrt(s);
}

double nonlinear_residual(const Potential& q, const NonlinearitySpec& nl, const ComplexField& u) {
    ComplexField F = flux_source(nl, u);
    return cn_residual(q, u, &F, +1);
}

// ---- transpose of the data map -------------------------------------------------

cplx DataRepresenter::pair(const Slice& phi, const BoundaryTrace& f) const {
    cplx s = 0.0;
    for (std::size_t i = 0; i < initial.size(); ++i) s += initial[i] * phi[i];
    for (std::size_t k = 1; k < lateral.size(); ++k)
        for (std::size_t j = 0; j < lateral[k].size(); ++j) s += lateral[k][j] * f.lateral[k][j];
    return s;
}

cplx DataRepresenter::pair_source(const ComplexField& F) const {
    cplx s = 0.0;
    const std::size_t nn = grid->nodes();
    for (std::size_t k = 0; k < source.size(); ++k)
        for (std::size_t i = 0; i < source[k].size(); ++i)
            s += source[k][i] * 0.5 * (F.data[k * nn + i] + F.data[(k + 1) * nn + i]);
    return s;
}

namespace {

/// (L^T mu) for the interior Laplacian L: all-node output.
void laplacian_transpose(const SpaceTimeGrid& g, const Slice& mu, Slice& out) {
    std::fill(out.begin(), out.end(), cplx{});
    for (std::size_t idx : g.interior_nodes()) {
        const cplx v = mu[idx];
        for (int a = 0; a < g.n; ++a) {
            const double c = 1.0 / (g.h[a] * g.h[a]);
            const std::size_t s = g.stride(a);
            out[idx + s] += c * v;
            out[idx - s] += c * v;
            out[idx] -= 2.0 * c * v;
        }
    }
}

}  // namespace

DataRepresenter transpose_data_map(const Potential& q, const ComplexField& kappa, const SolverOptions& opt) {
    GridPtr g = kappa.grid;
    check_potential(q, g);
    const auto& G = *g;
    const auto& bn = G.boundary_nodes();
    const double idt = 1.0 / G.dt;
    CnPropagator prop(g, opt);

    DataRepresenter rep;
    rep.grid = g;
    rep.lateral.assign(G.levels(), Slice(bn.size()));
    rep.source.assign(G.nt, Slice());

    Slice lam = kappa.slice(G.nt);
    Slice mu(G.nodes()), lt(G.nodes());
    for (int k = G.nt - 1; k >= 0; --k) {
        std::vector<double> qh = q.half_level(static_cast<std::size_t>(k));
        // mu = A^{-T} lam_I = A^{-1} lam_I (A is complex symmetric)
        prop.solve_system(qh.data(), lam.data(), mu.data(), +1);
        for (std::size_t i = 0; i < G.nodes(); ++i)
            if (G.is_boundary(i)) mu[i] = 0.0;
        rep.source[k] = mu;
        laplacian_transpose(G, mu, lt);
        for (std::size_t s = 0; s < bn.size(); ++s) rep.lateral[k + 1][s] = lam[bn[s]] - 0.5 * lt[bn[s]];
        Slice next = kappa.slice(static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < G.nodes(); ++i) next[i] -= 0.5 * lt[i];
        for (std::size_t idx : G.interior_nodes()) next[idx] += (I1 * idt - 0.5 * qh[idx]) * mu[idx];
        lam = std::move(next);
    }
    rep.initial = lam;
    return rep;
}

}  // namespace dsi
