#include "dsi/epsilon_lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "dsi/parallel.hpp"

namespace dsi {

ExpansionReport expansion_residual_study(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                         const BoundaryTrace& f, const std::vector<double>& eps_list,
                                         const PicardOptions& opt, int threads) {
    if (eps_list.empty()) throw SolverError("empty eps list");
    for (double e : eps_list)
        if (!(e > 0.0)) throw SolverError("eps must be positive");

    const ComplexField u1 = solve_linear(q, phi, f, opt.solver);
    ComplexField u2(u1.grid);
    if (nl.b.grid && nl.b.max_abs() > 0.0) u2 = compute_u2(q, nl.b, u1, false, opt.solver);
    const double n1 = sup_l2(u1);

    const std::size_t ne = eps_list.size();
    std::vector<double> r(ne, 0.0);
    std::vector<char> ok(ne, 0);
    parallel_for(ne, threads, [&](std::size_t i) {
        const double e = eps_list[i];
        NonlinearResult nr = solve_nonlinear_report(q, nl, phi, f, e, opt);
        if (!nr.report.converged) return;
        ComplexField d = nr.u;
        for (std::size_t j = 0; j < d.data.size(); ++j) d.data[j] -= e * u1.data[j] + e * e * u2.data[j];
        r[i] = sup_l2(d);
        ok[i] = 1;
    });

    ExpansionReport rep;
    rep.solver_tol = opt.solver.solver_tol;
    for (std::size_t i = 0; i < ne; ++i) {
        if (!ok[i]) {
            rep.dropped.push_back(eps_list[i]);
            continue;
        }
        const double e = eps_list[i];
        const double rel = n1 > 0.0 ? r[i] / (e * n1) : r[i];
        rep.eps.push_back(e);
        rep.residual.push_back(r[i]);
        rep.relative.push_back(rel);
        rep.excluded.push_back(!(rel >= 100.0 * rep.solver_tol) || !(r[i] > 0.0));
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t i = 0; i < rep.eps.size(); ++i) {
        if (rep.excluded[i]) continue;
        const double x = std::log(rep.eps[i]), y = std::log(rep.residual[i]);
        sx += x, sy += y, sxx += x * x, sxy += x * y, ++m;
    }
    rep.fitted = m;
    if (m >= 2) {
        const double den = m * sxx - sx * sx;
        rep.slope = (m * sxy - sx * sy) / den;
        rep.intercept = (sy - rep.slope * sx) / m;
        for (std::size_t i = 0; i < rep.eps.size(); ++i)
            if (!rep.excluded[i])
                rep.fit_residuals.push_back(std::log(rep.residual[i]) -
                                            (rep.slope * std::log(rep.eps[i]) + rep.intercept));
    }
    return rep;
}

void write_expansion_csv(const std::string& path, const ExpansionReport& r) {
    std::ofstream os(path);
    if (!os) throw SolverError("cannot write " + path);
    os.precision(17);
    os << "eps,residual,relative,excluded\n";
    for (std::size_t i = 0; i < r.eps.size(); ++i)
        os << r.eps[i] << ',' << r.residual[i] << ',' << r.relative[i] << ',' << (r.excluded[i] ? 1 : 0) << '\n';
}

ContractionReport contraction_study(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                    const BoundaryTrace& f, double eps, const PicardOptions& opt) {
    NonlinearResult nr = solve_nonlinear_report(q, nl, phi, f, eps, opt);
    ContractionReport rep;
    rep.eps = eps;
    rep.increments = nr.report.increments;
    rep.iterations = nr.report.iterations;
    rep.converged = nr.report.converged;
    const auto& inc = rep.increments;
    double logsum = 0.0;
    int used = 0;
    for (std::size_t i = 1; i < inc.size(); ++i) {
        const double ratio = inc[i - 1] > 0.0 ? inc[i] / inc[i - 1] : 0.0;
        rep.ratios.push_back(ratio);
        if (inc[i] > 100.0 * opt.picard_tol && std::isfinite(ratio) && ratio > 0.0) {
            logsum += std::log(ratio);
            ++used;
        }
    }
    if (used > 0)
        rep.rho = std::exp(logsum / used);
    else if (!rep.ratios.empty())
        rep.rho = rep.ratios.front();
    rep.failed = !rep.converged || rep.rho >= 1.0;
    return rep;
}

ContractionScan contraction_scan(const Potential& q, const NonlinearitySpec& nl, const Slice& phi,
                                 const BoundaryTrace& f, const std::vector<double>& eps_list,
                                 const PicardOptions& opt, int threads) {
    ContractionScan scan;
    scan.runs.resize(eps_list.size());
    parallel_for(eps_list.size(), threads,
                 [&](std::size_t i) { scan.runs[i] = contraction_study(q, nl, phi, f, eps_list[i], opt); });
    const ContractionReport* prev = nullptr;
    for (const auto& r : scan.runs) {
        if (r.failed || r.rho <= 0.0) continue;
        if (prev) {
            scan.halving_ratios.push_back(r.rho / prev->rho);
            if ((r.eps < prev->eps) != (r.rho < prev->rho)) scan.monotone = false;
        }
        prev = &r;
    }
    return scan;
}

// ---- admissibility ------------------------------------------------------------------

namespace {

// Central stencils for derivatives of order 0..3 in one coordinate: offsets and weights (step 1).
struct Stencil {
    std::vector<int> off;
    std::vector<double> w;
};

const Stencil& stencil(int order) {
    static const Stencil s[4] = {
        {{0}, {1.0}},
        {{-1, 1}, {-0.5, 0.5}},
        {{-1, 0, 1}, {1.0, -2.0, 1.0}},
        {{-2, -1, 1, 2}, {-0.5, 1.0, -1.0, 0.5}},
    };
    return s[order];
}

// All multi-indices over `dims` coordinates with total order `order`.
void multi_indices(int dims, int order, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == dims - 1) {
        cur.push_back(order);
        out.push_back(cur);
        cur.pop_back();
        return;
    }
    for (int k = 0; k <= order; ++k) {
        cur.push_back(k);
        multi_indices(dims, order - k, cur, out);
        cur.pop_back();
    }
}

// Max over components of |d^alpha R| at real coordinates y (2n: re/im interleaved).
double derivative_norm(const RemainderFn& R, int n, double t, const double* x, const std::vector<double>& y,
                       const std::vector<int>& alpha, double delta) {
    const int dims = 2 * n;
    std::vector<int> idx(dims, 0);
    std::vector<cplx> acc(n, cplx{});
    std::vector<cplx> p(n);
    int total = 0;
    for (int a : alpha) total += a;
    for (;;) {
        double w = 1.0;
        std::vector<double> yy = y;
        for (int d = 0; d < dims; ++d) {
            const Stencil& s = stencil(alpha[d]);
            w *= s.w[idx[d]];
            yy[d] += s.off[idx[d]] * delta;
        }
        for (int a = 0; a < n; ++a) p[a] = cplx(yy[2 * a], yy[2 * a + 1]);
        auto v = R(t, x, p.data());
        for (int a = 0; a < n && a < static_cast<int>(v.size()); ++a) acc[a] += w * v[a];
        int d = 0;
        for (; d < dims; ++d) {
            if (++idx[d] < static_cast<int>(stencil(alpha[d]).off.size())) break;
            idx[d] = 0;
        }
        if (d == dims) break;
    }
    double mx = 0.0;
    for (const auto& z : acc) mx = std::max(mx, std::abs(z));
    return mx / std::pow(delta, total);
}

}  // namespace

AdmissibilityReport check_remainder_admissibility(const RemainderFn& R, const AdmissibilityOptions& opt) {
    const int n = opt.n;
    if (n < 1 || opt.shells < 1 || opt.samples_per_shell < 1 || !(opt.radius > 0.0))
        throw SolverError("invalid admissibility options");
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);

    AdmissibilityReport rep;
    rep.C.assign(4, 0.0);
    rep.shell_C.assign(4, std::vector<double>(opt.shells, 0.0));
    std::vector<std::vector<std::vector<int>>> alphas(4);
    for (int o = 0; o <= 3; ++o) {
        std::vector<int> cur;
        multi_indices(2 * n, o, cur, alphas[o]);
    }
    std::vector<double> x(n);
    for (int j = 0; j < opt.shells; ++j) {
        const double hi = opt.radius * std::pow(10.0, -j), lo = hi / 10.0;
        for (int s = 0; s < opt.samples_per_shell; ++s) {
            const double t = 0.05 + 0.95 * U(rng);
            for (auto& xi : x) xi = U(rng);
            std::vector<double> y(2 * n);
            double nn = 0.0;
            for (auto& c : y) c = N(rng), nn += c * c;
            const double rad = lo + (hi - lo) * U(rng);
            for (auto& c : y) c *= rad / std::sqrt(nn);
            const double delta = 0.05 * rad;
            for (int o = 0; o <= 3; ++o) {
                double mx = 0.0;
                for (const auto& a : alphas[o]) mx = std::max(mx, derivative_norm(R, n, t, x.data(), y, a, delta));
                rep.shell_C[o][j] = std::max(rep.shell_C[o][j], mx / std::pow(rad, 3 - o));
            }
        }
    }
    for (int o = 0; o <= 3; ++o) {
        const auto& sc = rep.shell_C[o];
        rep.C[o] = *std::max_element(sc.begin(), sc.end());
        const double ref = std::max(sc[0], 1e-300);
        for (double c : sc)
            if (c > opt.growth_limit * ref && c > 1e-12) {
                rep.bounded = false;
                if (rep.reason.empty())
                    rep.reason = "order " + std::to_string(o) + " derivative exceeds C |p|^" +
                                 std::to_string(3 - o) + " as p -> 0";
            }
    }

    // flatness: sup over sampled (x, p) of |R| at the flat times, relative to t^power
    double prev = INFINITY;
    for (double t : opt.flat_times) {
        double sup = 0.0;
        for (int s = 0; s < 4 * opt.samples_per_shell; ++s) {
            for (auto& xi : x) xi = U(rng);
            std::vector<cplx> p(n);
            double nn = 0.0;
            for (auto& z : p) z = cplx(N(rng), N(rng)), nn += std::norm(z);
            const double rad = opt.radius * U(rng);
            for (auto& z : p) z *= rad / std::sqrt(nn);
            for (const auto& v : R(t, x.data(), p.data())) sup = std::max(sup, std::abs(v));
        }
        const double ratio = sup / std::pow(t, opt.flat_power);
        rep.flat_ratio.push_back(ratio);
        if (ratio > 0.0 && !(ratio < prev)) {
            rep.flat = false;
            if (rep.reason.empty()) rep.reason = "remainder is not flat at t = 0";
        }
        prev = ratio;
    }
    rep.admissible = rep.bounded && rep.flat;
    return rep;
}

AdmissibilityReport check_remainder_admissibility(const NonlinearitySpec& nl, AdmissibilityOptions opt) {
    if (nl.b.grid) opt.n = nl.b.grid->n;
    const bool cubic = nl.remainder == RemainderKind::cubic_flat && nl.c != 0.0;
    const double c = nl.c;
    const int n = opt.n;
    RemainderFn R = [cubic, c, n](double t, const double*, const cplx* p) {
        std::vector<cplx> r(n, cplx{});
        if (!cubic) return r;
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += std::norm(p[a]);
        for (int a = 0; a < n; ++a) r[a] = c * flat_profile(t) * s * p[a];
        return r;
    };
    return check_remainder_admissibility(R, opt);
}

}  // namespace dsi
