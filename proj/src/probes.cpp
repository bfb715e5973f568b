#include "dsi/probes.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "dsi/io.hpp"

namespace dsi {

namespace {

constexpr cplx kI{0.0, 1.0};

std::vector<double> normalized(const std::vector<double>& w, int n, const char* what) {
    if (static_cast<int>(w.size()) != n) throw ProbeError(std::string(what) + ": wrong dimension");
    double s = 0.0;
    for (double x : w) s += x * x;
    s = std::sqrt(s);
    if (!(s > 0.0)) throw ProbeError(std::string(what) + ": zero direction");
    std::vector<double> out(w);
    for (auto& x : out) x /= s;
    return out;
}

double max_h(const SpaceTimeGrid& g) { return *std::max_element(g.h.begin(), g.h.end()); }

/// d/dt on full levels: central inside, second-order one-sided at the ends.
ComplexField time_derivative(const ComplexField& f) {
    const auto& g = *f.grid;
    ComplexField out(f.grid);
    const std::size_t N = g.nt;
    for (std::size_t k = 0; k <= N; ++k)
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            cplx d;
            if (N < 2)
                d = (f.at(1, i) - f.at(0, i)) / g.dt;
            else if (k == 0)
                d = (-3.0 * f.at(0, i) + 4.0 * f.at(1, i) - f.at(2, i)) / (2.0 * g.dt);
            else if (k == N)
                d = (3.0 * f.at(N, i) - 4.0 * f.at(N - 1, i) + f.at(N - 2, i)) / (2.0 * g.dt);
            else
                d = (f.at(k + 1, i) - f.at(k - 1, i)) / (2.0 * g.dt);
            out.at(k, i) = d;
        }
    return out;
}

/// Laplacian with boundary values copied from the nearest interior node.
Slice laplacian_extended(const GridPtr& gp, const cplx* u) {
    const auto& g = *gp;
    Slice L = laplacian(gp, u);
    int multi[3];
    for (std::size_t idx : g.boundary_nodes()) {
        g.unravel(idx, multi);
        for (int a = 0; a < g.n; ++a) multi[a] = std::clamp(multi[a], 1, std::max(1, g.m[a] - 2));
        L[idx] = L[g.index(multi)];
    }
    return L;
}

/// -i d_t A + Lap A + q A.
ComplexField adjoint_operator(const Potential& q, const ComplexField& A) {
    const auto& g = *A.grid;
    ComplexField out = time_derivative(A);
    out *= -kI;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        Slice L = laplacian_extended(A.grid, A.level(k));
        for (std::size_t i = 0; i < g.nodes(); ++i) out.at(k, i) += L[i] + q.at(k, i) * A.at(k, i);
    }
    return out;
}

std::uint64_t fnv(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class T>
std::uint64_t fnv_vec(std::uint64_t h, const std::vector<T>& v) {
    const std::uint64_t n = v.size();
    h = fnv(h, &n, sizeof n);
    return v.empty() ? h : fnv(h, v.data(), v.size() * sizeof(T));
}

}  // namespace

// ---- discrete plane waves ---------------------------------------------------------

double disc_symbol(const SpaceTimeGrid& g, const double* K) {
    double s = 0.0;
    for (int a = 0; a < g.n; ++a) {
        const double sn = std::sin(0.5 * K[a] * g.h[a]);
        s -= 4.0 / (g.h[a] * g.h[a]) * sn * sn;
    }
    return s;
}

double disc_theta(const SpaceTimeGrid& g, const double* K) { return 2.0 * std::atan(-0.5 * disc_symbol(g, K) * g.dt); }

double disc_theta_slope(const SpaceTimeGrid& g, const double* K, const double* u) {
    const double a = -0.5 * disc_symbol(g, K) * g.dt;
    double s = 0.0;
    for (int c = 0; c < g.n; ++c) s += (2.0 / g.h[c]) * std::sin(K[c] * g.h[c]) * u[c];
    return 2.0 / (1.0 + a * a) * 0.5 * g.dt * s;
}

double grad_symbol(const SpaceTimeGrid& g, int axis, double K) { return std::sin(K * g.h[axis]) / g.h[axis]; }

ComplexField discrete_plane_wave(const GridPtr& gp, const std::vector<double>& K, int sign) {
    const auto& g = *gp;
    if (static_cast<int>(K.size()) != g.n) throw ProbeError("plane wave: wrong dimension");
    const double s = sign >= 0 ? 1.0 : -1.0;
    const double th = disc_theta(g, K.data());
    Slice space(g.nodes());
    int multi[3];
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        g.unravel(i, multi);
        double ph = 0.0;
        for (int a = 0; a < g.n; ++a) ph += K[a] * g.coord(a, multi[a]);
        space[i] = std::polar(1.0, s * ph);
    }
    ComplexField f(gp);
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const cplx zk = std::polar(1.0, s * th * static_cast<double>(k));
        cplx* lv = f.level(k);
        for (std::size_t i = 0; i < g.nodes(); ++i) lv[i] = space[i] * zk;
    }
    return f;
}

double remainder_lambda_norm(const ComplexField& R, double lambda) { return lambda * R.l2_norm(); }

double remainder_grad_norm(const ComplexField& R) {
    const auto& g = *R.grid;
    double s = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        const double wt = (k == 0 || k == g.levels() - 1) ? 0.5 * g.dt : g.dt;
        VectorSlice d = gradient(R, k);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            double e = 0.0;
            for (int a = 0; a < g.n; ++a) e += std::norm(d[a][i]);
            s += wt * trapezoid_node_weight(g, i) * e;
        }
    }
    return std::sqrt(s);
}

void check_resolution(const SpaceTimeGrid& g, double lambda, double cap) {
    if (!(lambda > 0.0)) throw ProbeError("lambda must be positive");
    if (lambda * max_h(g) > cap * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "lambda " << lambda << " exceeds the resolution cap " << cap << " / h = " << cap / max_h(g);
        throw ProbeError(os.str());
    }
}

// ---- probes -----------------------------------------------------------------------

ProbeSolution build_u1_probe(const Potential& q, const ProbeSpec& spec, const SolverOptions& opt, double cap) {
    const GridPtr& gp = q.grid;
    const auto& g = *gp;
    check_resolution(g, spec.lambda, cap);
    ProbeSolution out;
    out.spec = spec;
    out.spec.omega = normalized(spec.omega, g.n, "u1 probe");
    out.spec.sign = -1;
    std::vector<double> K(g.n);
    for (int a = 0; a < g.n; ++a) K[a] = spec.lambda * out.spec.omega[a];
    ComplexField P = discrete_plane_wave(gp, K, -1);
    out.field = solve_linear(q, P.slice(0), BoundaryTrace::of(P), opt);
    out.remainder = ComplexField(gp);
    for (std::size_t j = 0; j < P.data.size(); ++j) out.remainder.data[j] = out.field.data[j] * std::conj(P.data[j]) - 1.0;
    out.lambda_r = remainder_lambda_norm(out.remainder, spec.lambda);
    out.grad_r = remainder_grad_norm(out.remainder);
    return out;
}

ProbeSolution build_v_probe_free(const GridPtr& gp, const ProbeSpec& spec, const SolverOptions& opt, double cap) {
    const auto& g = *gp;
    check_resolution(g, spec.lambda, cap);
    ProbeSolution out;
    out.spec = spec;
    out.spec.omega = normalized(spec.omega, g.n, "v probe");
    out.spec.sign = +1;
    std::vector<double> xi = spec.xi.empty() ? std::vector<double>(g.n, 0.0) : spec.xi;
    if (static_cast<int>(xi.size()) != g.n) throw ProbeError("v probe: xi has the wrong dimension");
    double dot = 0.0, xn = 0.0;
    for (int a = 0; a < g.n; ++a) dot += xi[a] * out.spec.omega[a], xn += xi[a] * xi[a];
    if (std::abs(dot) > 1e-10 * (1.0 + std::sqrt(xn))) throw ProbeError("v probe: xi must be orthogonal to omega");
    out.spec.xi = xi;

    std::vector<double> K(g.n);
    for (int a = 0; a < g.n; ++a) K[a] = spec.lambda * out.spec.omega[a];
    ComplexField A = discrete_plane_wave(gp, K, +1);
    ComplexField mod(gp);
    int multi[3];
    for (std::size_t k = 0; k < g.levels(); ++k)
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            g.unravel(i, multi);
            double ph = spec.tau * g.time(static_cast<int>(k));
            for (int a = 0; a < g.n; ++a) ph += xi[a] * g.coord(a, multi[a]);
            mod.at(k, i) = std::polar(1.0, ph);
        }
    ComplexField data(gp);
    for (std::size_t j = 0; j < data.data.size(); ++j) data.data[j] = A.data[j] * mod.data[j];
    out.field = solve_adjoint(zero_potential(gp), data.slice(0), BoundaryTrace::of(data), opt);
    out.remainder = ComplexField(gp);
    for (std::size_t j = 0; j < data.data.size(); ++j)
        out.remainder.data[j] = out.field.data[j] * std::conj(A.data[j]) - mod.data[j];
    out.lambda_r = remainder_lambda_norm(out.remainder, spec.lambda);
    out.grad_r = remainder_grad_norm(out.remainder);
    return out;
}

// ---- transport --------------------------------------------------------------------

ComplexField solve_transport(const std::vector<double>& omega_in, const ComplexField& rhs, double pad) {
    const GridPtr& gp = rhs.grid;
    const auto& g = *gp;
    if (pad < 0.0) throw ProbeError("transport: negative padding");
    const std::vector<double> w = normalized(omega_in, g.n, "transport");
    const double hmin = *std::min_element(g.h.begin(), g.h.end());

    // even reflection into the box plus a cos^2 taper over the padding
    auto sample = [&](const cplx* u, const double* p) -> cplx {
        double outside = 0.0;
        double y[3];
        for (int a = 0; a < g.n; ++a) {
            double v = p[a];
            if (v < 0.0) outside = std::max(outside, -v), v = -v;
            if (v > g.box[a]) outside = std::max(outside, v - g.box[a]), v = 2.0 * g.box[a] - v;
            y[a] = std::clamp(v, 0.0, g.box[a]);
        }
        double taper = 1.0;
        if (outside > 0.0) {
            if (pad <= 0.0 || outside >= pad) return {};
            const double c = std::cos(0.5 * M_PI * outside / pad);
            taper = c * c;
        }
        int base[3];
        double frac[3];
        for (int a = 0; a < g.n; ++a) {
            const double s = y[a] / g.h[a];
            int i = static_cast<int>(std::floor(s));
            i = std::clamp(i, 0, g.m[a] - 2);
            base[a] = i;
            frac[a] = s - i;
        }
        cplx acc{};
        int multi[3];
        for (int corner = 0; corner < (1 << g.n); ++corner) {
            double wt = 1.0;
            for (int a = 0; a < g.n; ++a) {
                const int bit = (corner >> a) & 1;
                multi[a] = base[a] + bit;
                wt *= bit ? frac[a] : 1.0 - frac[a];
            }
            if (wt != 0.0) acc += wt * u[g.index(multi)];
        }
        return taper * acc;
    };

    ComplexField A(gp);
    int multi[3];
    double x[3], p[3];
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        g.unravel(i, multi);
        for (int a = 0; a < g.n; ++a) x[a] = g.coord(a, multi[a]);
        // path length back along -omega to the padded box
        double s = std::numeric_limits<double>::infinity();
        for (int a = 0; a < g.n; ++a) {
            if (w[a] > 1e-14) s = std::min(s, (x[a] + pad) / w[a]);
            if (w[a] < -1e-14) s = std::min(s, (g.box[a] + pad - x[a]) / -w[a]);
        }
        if (!(s > 0.0)) continue;
        const int nseg = std::max(2, static_cast<int>(std::ceil(s / (0.5 * hmin))));
        const double ds = s / nseg;
        for (std::size_t k = 0; k < g.levels(); ++k) {
            const cplx* u = rhs.level(k);
            cplx acc{};
            for (int j = 0; j <= nseg; ++j) {
                const double sig = j * ds;
                for (int a = 0; a < g.n; ++a) p[a] = x[a] - sig * w[a];
                acc += ((j == 0 || j == nseg) ? 0.5 : 1.0) * sample(u, p);
            }
            A.at(k, i) = -ds * acc;
        }
    }
    return A;
}

// ---- v_j family ---------------------------------------------------------------------

VjFamily build_vj_family(const Potential& q, double lambda, const std::vector<std::vector<double>>& omegas, int order,
                         const SolverOptions& opt, double pad, double cap) {
    const GridPtr& gp = q.grid;
    const auto& g = *gp;
    check_resolution(g, lambda, cap);
    if (static_cast<int>(omegas.size()) < g.n) throw ProbeError("v_j family needs at least n directions");
    if (order < 0) throw ProbeError("negative transport order");
    VjFamily fam;
    fam.lambda = lambda;
    for (const auto& w : omegas) fam.omegas.push_back(normalized(w, g.n, "v_j family"));

    const int nm = static_cast<int>(fam.omegas.size());
    {
        Eigen::MatrixXd M(nm, g.n);
        for (int r = 0; r < nm; ++r)
            for (int c = 0; c < g.n; ++c) M(r, c) = fam.omegas[r][c];
        fam.omega_det = std::sqrt(std::abs((M.transpose() * M).determinant()));
        if (fam.omega_det < 1e-8) throw ProbeError("v_j directions are linearly dependent");
    }

    for (int j = 0; j < nm; ++j) {
        std::vector<double> K(g.n);
        for (int a = 0; a < g.n; ++a) K[a] = lambda * fam.omegas[j][a];
        ComplexField phase = discrete_plane_wave(gp, K, +1);

        std::vector<ComplexField> amps;
        ComplexField A0(gp);
        std::fill(A0.data.begin(), A0.data.end(), cplx{1.0, 0.0});
        amps.push_back(A0);
        for (int k = 1; k <= order; ++k) amps.push_back(solve_transport(fam.omegas[j], adjoint_operator(q, amps.back()), pad));

        ComplexField ansatz(gp);
        cplx scale{1.0, 0.0};
        for (int k = 0; k <= order; ++k) {
            for (std::size_t t = 0; t < ansatz.data.size(); ++t) ansatz.data[t] += scale * amps[k].data[t];
            scale /= 2.0 * kI * lambda;
        }
        for (std::size_t t = 0; t < ansatz.data.size(); ++t) ansatz.data[t] *= phase.data[t];

        ProbeSolution ps;
        ps.spec.lambda = lambda;
        ps.spec.omega = fam.omegas[j];
        ps.spec.sign = +1;
        ps.spec.order = order;
        ps.field = solve_adjoint(q, ansatz.slice(0), BoundaryTrace::of(ansatz), opt);
        ps.remainder = ps.field - ansatz;
        ps.lambda_r = remainder_lambda_norm(ps.remainder, lambda);
        ps.grad_r = remainder_grad_norm(ps.remainder);
        fam.members.push_back(std::move(ps));
        fam.amplitudes.push_back(std::move(amps));
    }

    fam.det_ratio = RealField(gp);
    const double norm = std::pow(lambda, g.n);
    double mn = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < g.levels(); ++k) {
        std::vector<VectorSlice> D;
        for (int j = 0; j < nm; ++j) D.push_back(gradient(fam.members[j].field, k));
        Eigen::MatrixXcd A(nm, g.n);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            for (int j = 0; j < nm; ++j)
                for (int c = 0; c < g.n; ++c) A(j, c) = D[j][c][i];
            const double det = nm == g.n ? std::abs(A.determinant()) : std::sqrt(std::abs((A.adjoint() * A).determinant()));
            const double r = det / norm;
            fam.det_ratio.at(k, i) = r;
            mn = std::min(mn, r);
        }
    }
    fam.min_det_ratio = mn;
    return fam;
}

// ---- ladder -----------------------------------------------------------------------

std::vector<double> lambda_ladder(const SpaceTimeGrid& g, const std::vector<double>& fractions, double cap) {
    const double lcap = cap / max_h(g);
    std::vector<double> out;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ProbeError("ladder fractions must lie in (0, 1]");
        const double target = f * lcap;
        // Dirichlet eigenvalues pi^2 sum (j_a / box_a)^2 up to (1.2 target)^2
        std::vector<double> eig;
        const double top = 1.44 * target * target;
        std::vector<int> jmax(g.n);
        for (int a = 0; a < g.n; ++a) jmax[a] = static_cast<int>(std::ceil(1.2 * target * g.box[a] / M_PI)) + 1;
        std::vector<int> j(g.n, 1);
        for (;;) {
            double mu = 0.0;
            for (int a = 0; a < g.n; ++a) mu += std::pow(M_PI * j[a] / g.box[a], 2);
            if (mu <= top) eig.push_back(mu);
            int a = 0;
            while (a < g.n && ++j[a] > jmax[a]) j[a++] = 1;
            if (a == g.n) break;
        }
        double best = target, best_gap = -1.0;
        const int steps = 400;
        for (int s = steps; s >= 0; --s) {
            const double lam = target * (0.9 + 0.1 * s / steps);
            double gap = std::numeric_limits<double>::infinity();
            for (double mu : eig) gap = std::min(gap, std::abs(lam * lam - mu));
            if (gap > best_gap + 1e-12) best_gap = gap, best = lam;
        }
        out.push_back(best);
    }
    return out;
}

std::vector<double> perpendicular_direction(const std::vector<double>& xi) {
    const int n = static_cast<int>(xi.size());
    if (n != 2 && n != 3) throw ProbeError("perpendicular direction: n must be 2 or 3");
    double xn = 0.0;
    for (double x : xi) xn += x * x;
    xn = std::sqrt(xn);
    std::vector<double> w(n, 0.0);
    if (xn == 0.0) {
        w[0] = 1.0;
        return w;
    }
    if (n == 2) return {-xi[1] / xn, xi[0] / xn};
    int a = 0;
    for (int b = 1; b < 3; ++b)
        if (std::abs(xi[b]) < std::abs(xi[a])) a = b;
    w[a] = 1.0;
    const double d = xi[a] / (xn * xn);
    double s = 0.0;
    for (int b = 0; b < 3; ++b) w[b] -= d * xi[b], s += w[b] * w[b];
    for (auto& x : w) x /= std::sqrt(s);
    return w;
}

// ---- cache ------------------------------------------------------------------------

ProbeCache::ProbeCache(std::string dir) : dir_(std::move(dir)) {}

ProbeCache ProbeCache::from_env(const std::string& fallback) {
    const char* e = std::getenv("DSI_PROBE_CACHE");
    return ProbeCache(e && *e ? std::string(e) : fallback);
}

std::string ProbeCache::key(const ProbeSpec& spec, const SpaceTimeGrid& g, const Potential* q, const std::string& tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv(h, &spec.lambda, sizeof spec.lambda);
    h = fnv_vec(h, spec.omega);
    h = fnv(h, &spec.tau, sizeof spec.tau);
    h = fnv_vec(h, spec.xi);
    h = fnv(h, &spec.sign, sizeof spec.sign);
    h = fnv(h, &spec.order, sizeof spec.order);
    h = fnv_vec(h, g.m);
    h = fnv(h, &g.nt, sizeof g.nt);
    h = fnv_vec(h, g.box);
    h = fnv(h, &g.T, sizeof g.T);
    if (q) h = fnv_vec(h, q->data);
    h = fnv(h, tag.data(), tag.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::optional<ComplexField> ProbeCache::load(const std::string& key, const GridPtr& g) const {
    const std::string path = dir_ + "/" + key + ".srf";
    if (dir_.empty() || !std::filesystem::exists(path)) return std::nullopt;
    try {
        LoadedField lf = read_srf1(path);
        if (!lf.field.grid->same_shape(*g)) return std::nullopt;
        lf.field.grid = g;
        return lf.field;
    } catch (const IoError&) {
        return std::nullopt;
    }
}

void ProbeCache::store(const std::string& key, const ComplexField& f) const {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    const std::string path = dir_ + "/" + key + ".srf";
    const std::string tmp = path + ".tmp";
    write_srf1(tmp, f);
    std::filesystem::rename(tmp, path);
}

}  // namespace dsi
