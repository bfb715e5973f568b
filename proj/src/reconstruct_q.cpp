#include "dsi/reconstruct_q.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "dsi/parallel.hpp"

namespace dsi {

namespace {

constexpr cplx kI{0.0, 1.0};

struct FaceNode {
    std::size_t slot;
    std::size_t node;
    int axis;
    int dir;
    double measure;
};

std::vector<FaceNode> face_nodes(const SpaceTimeGrid& g) {
    std::vector<FaceNode> out;
    const auto& bn = g.boundary_nodes();
    int multi[3];
    for (std::size_t s = 0; s < bn.size(); ++s) {
        if (g.face_count(bn[s]) != 1) continue;
        g.unravel(bn[s], multi);
        FaceNode fn{s, bn[s], 0, 0, 0.0};
        for (int a = 0; a < g.n; ++a) {
            if (multi[a] == 0) fn.axis = a, fn.dir = -1;
            if (multi[a] == g.m[a] - 1) fn.axis = a, fn.dir = +1;
        }
        fn.measure = g.face_measure(fn.axis);
        out.push_back(fn);
    }
    return out;
}

}  // namespace

// ---- data sources -------------------------------------------------------------------

DirectQSource::DirectQSource(Potential q, SolverOptions opt) : q_(std::move(q)), opt_(opt) {}

Measurement DirectQSource::measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const {
    Measurement m = lambda_q(q_, phi, f, opt_);
    m.input_id = key;
    return m;
}

ExtractedQSource::ExtractedQSource(Potential q, NonlinearitySpec nl, double eps, PicardOptions opt)
    : q_(std::move(q)), nl_(std::move(nl)), eps_(eps), opt_(opt) {
    if (!(eps_ > 0.0)) throw ReconstructionError("extraction eps must be positive");
}

Measurement ExtractedQSource::measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const {
    auto m1 = apply_io_map(q_, nl_, phi, f, eps_, opt_, key);
    auto m2 = apply_io_map(q_, nl_, phi, f, 2.0 * eps_, opt_, key);
    Measurement g1 = extract_linearizations(m1, m2).g1;
    g1.input_id = key;
    return g1;
}

CachedQSource::CachedQSource(std::shared_ptr<const QDataSource> inner, GridPtr g, std::string dir)
    : inner_(std::move(inner)), grid_(std::move(g)), dir_(std::move(dir)) {}

Measurement CachedQSource::measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const {
    const std::string stem = dir_ + "/" + key;
    if (std::filesystem::exists(stem + ".json")) return read_measurement(stem, grid_);
    if (!inner_) throw ReconstructionError("missing measurement " + stem);
    Measurement m = inner_->measure(phi, f, key);
    std::filesystem::create_directories(dir_);
    write_measurement(stem, m);
    return m;
}

// ---- identity -----------------------------------------------------------------------

cplx assemble_q_identity(const Measurement& data, const Slice& phi, const BoundaryTrace& f, const ComplexField& v) {
    require_same_grid(data.grid, v.grid, "q identity");
    require_same_grid(data.grid, f.grid, "q identity");
    const auto& g = *v.grid;
    const std::size_t N = g.nt;
    cplx vol{};
    for (std::size_t i : g.interior_nodes()) vol += data.final_state[i] * v.at(N, i) - phi[i] * v.at(0, i);
    cplx total = -kI * g.cell_volume() * vol;

    cplx bsum{};
    for (const auto& fn : face_nodes(g)) {
        const std::size_t in = fn.dir > 0 ? fn.node - g.stride(fn.axis) : fn.node + g.stride(fn.axis);
        cplx acc{};
        for (std::size_t k = 0; k < N; ++k) {
            const cplx G = 0.5 * (data.flux.lateral[k][fn.slot] + data.flux.lateral[k + 1][fn.slot]);
            const cplx u = 0.5 * (f.lateral[k][fn.slot] + f.lateral[k + 1][fn.slot]);
            const cplx vb = 0.5 * (v.at(k, fn.node) + v.at(k + 1, fn.node));
            const cplx vi = 0.5 * (v.at(k, in) + v.at(k + 1, in));
            acc += G * vb - u * (vb - vi) / g.h[fn.axis];
        }
        bsum += fn.measure * acc;
    }
    return total - g.dt * bsum;
}

cplx assemble_q_identity(const Measurement& data, const ProbeSolution& u1, const ProbeSolution& v) {
    return assemble_q_identity(data, u1.field.slice(0), BoundaryTrace::of(u1.field), v.field);
}

// ---- literal sampling ---------------------------------------------------------------

cplx sample_q_literal(const QDataSource& src, const std::vector<double>& lambdas, double tau,
                      const std::vector<double>& xi, const SolverOptions& opt) {
    const GridPtr g = src.grid();
    if (lambdas.empty()) throw ReconstructionError("no lambda given");
    const std::vector<double> omega = perpendicular_direction(xi);
    std::vector<cplx> vals;
    for (double lam : lambdas) {
        check_resolution(*g, lam);
        std::vector<double> K(g->n);
        for (int a = 0; a < g->n; ++a) K[a] = lam * omega[a];
        ComplexField P = discrete_plane_wave(g, K, -1);
        ProbeSpec sp{lam, omega, 0.0, {}, -1, 0};
        Measurement m = src.measure(P.slice(0), BoundaryTrace::of(P), probe_key(sp));
        ProbeSpec vs{lam, omega, tau, xi, +1, 0};
        ProbeSolution v = build_v_probe_free(g, vs, opt);
        vals.push_back(assemble_q_identity(m, P.slice(0), BoundaryTrace::of(P), v.field));
    }
    if (vals.size() == 1) return vals[0];
    const double l1 = lambdas[lambdas.size() - 2], l2 = lambdas.back();
    const cplx s1 = vals[vals.size() - 2], s2 = vals.back();
    return (l2 * s2 - l1 * s1) / (l2 - l1);
}

// ---- matched sampling ---------------------------------------------------------------

std::vector<ProbeSpec> q_probe_dictionary(const SpaceTimeGrid& g, const QSamplingOptions& opt) {
    if (opt.directions < 1) throw ReconstructionError("need at least one probe direction");
    std::vector<double> lams = opt.lambdas.empty() ? lambda_ladder(g) : opt.lambdas;
    std::sort(lams.begin(), lams.end(), std::greater<>());
    std::vector<ProbeSpec> out;
    for (double lam : lams) {
        check_resolution(g, lam);
        for (int d = 0; d < opt.directions; ++d) {
            ProbeSpec sp;
            sp.lambda = lam;
            sp.sign = -1;
            if (g.n == 2) {
                const double a = 2.0 * M_PI * d / opt.directions;
                sp.omega = {std::cos(a), std::sin(a)};
            } else {
                const double z = 1.0 - (2.0 * d + 1.0) / opt.directions;
                const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double a = M_PI * (3.0 - std::sqrt(5.0)) * d;
                sp.omega = {r * std::cos(a), r * std::sin(a), z};
            }
            out.push_back(sp);
        }
    }
    return out;
}

std::string probe_key(const ProbeSpec& spec) {
    std::string s = "u1";
    char buf[64];
    std::snprintf(buf, sizeof buf, "_l%.10g", spec.lambda);
    s += buf;
    for (double w : spec.omega) {
        std::snprintf(buf, sizeof buf, "_%.12f", w);
        s += buf;
    }
    if (spec.tau != 0.0 || !spec.xi.empty()) {
        std::snprintf(buf, sizeof buf, "_t%.10g", spec.tau);
        s += buf;
    }
    return s;
}

LatticeMatch match_lattice(const FourierSampleSet& lattice, const std::vector<ProbeSpec>& dict, double eta_max,
                           int sign, int threads) {
    const auto& g = *lattice.grid;
    const int n = g.n;
    const std::size_t P = dict.size();
    const std::size_t L = lattice.size();
    std::vector<double> theta0(P);
    std::vector<std::array<double, 3>> base(P);
    for (std::size_t p = 0; p < P; ++p) {
        for (int a = 0; a < n; ++a) base[p][a] = dict[p].lambda * dict[p].omega[a];
        theta0[p] = disc_theta(g, base[p].data());
    }
    LatticeMatch out;
    out.choice.assign(L, -1);
    out.K.assign(L, {0.0, 0.0, 0.0});
    out.eta.assign(L, 0.0);
    const double sg = sign >= 0 ? 1.0 : -1.0;
    const std::size_t chunk = 4096;
    parallel_for((L + chunk - 1) / chunk, threads, [&](std::size_t c) {
        double K[3], u[3], xi[3];
        for (std::size_t idx = c * chunk; idx < std::min(L, (c + 1) * chunk); ++idx) {
            const double target = sg * lattice.tau(idx) * g.dt;
            for (int a = 0; a < n; ++a) xi[a] = sg * lattice.xi(idx, a);
            // largest lambda first: the first rung that reaches the target wins
            int best = -1;
            double best_eta = std::numeric_limits<double>::infinity();
            for (std::size_t p = 0; p < P; ++p) {
                if (p > 0 && dict[p].lambda != dict[p - 1].lambda && best >= 0 && best_eta <= eta_max) break;
                double kn = 0.0;
                for (int a = 0; a < n; ++a) K[a] = base[p][a] + xi[a], kn += K[a] * K[a];
                kn = std::sqrt(kn);
                if (kn < 1e-12) continue;
                const double f = disc_theta(g, K) - theta0[p] - target;
                if (std::abs(f) > 1.0) continue;
                for (int a = 0; a < n; ++a) u[a] = K[a] / kn;
                const double sl = disc_theta_slope(g, K, u);
                if (std::abs(sl) < 1e-12) continue;
                const double eta = std::abs(f / sl);
                if (eta < best_eta) best_eta = eta, best = static_cast<int>(p);
            }
            if (best < 0 || best_eta > 2.0 * eta_max) continue;
            double kn = 0.0;
            for (int a = 0; a < n; ++a) K[a] = base[best][a] + xi[a], kn += K[a] * K[a];
            kn = std::sqrt(kn);
            for (int a = 0; a < n; ++a) u[a] = K[a] / kn;
            double s = 0.0, Ks[3], f = 0.0;
            for (int it = 0; it < 30; ++it) {
                for (int a = 0; a < n; ++a) Ks[a] = K[a] + s * u[a];
                f = disc_theta(g, Ks) - theta0[best] - target;
                if (std::abs(f) < 1e-14) break;
                const double sl = disc_theta_slope(g, Ks, u);
                if (std::abs(sl) < 1e-14) break;
                s -= f / sl;
            }
            if (std::abs(f) > 1e-11 || std::abs(s) > eta_max) continue;
            for (int a = 0; a < n; ++a) out.K[idx][a] = K[a] + s * u[a];
            out.eta[idx] = std::abs(s);
            out.choice[idx] = best;
        }
    });
    return out;
}

FourierSampleSet sample_q_matched(const QDataSource& src, const QSamplingOptions& opt, QSamplingReport* report) {
    const GridPtr gp = src.grid();
    const auto& g = *gp;
    const int n = g.n;
    const auto dict = q_probe_dictionary(g, opt);
    const std::size_t P = dict.size();
    FourierSampleSet out(gp);
    const std::size_t L = out.size();

    std::vector<double> theta0(P);
    std::vector<std::array<double, 3>> base(P);
    for (std::size_t p = 0; p < P; ++p) {
        for (int a = 0; a < n; ++a) base[p][a] = dict[p].lambda * dict[p].omega[a];
        theta0[p] = disc_theta(g, base[p].data());
    }
    const LatticeMatch match = match_lattice(out, dict, opt.eta_max, +1, opt.threads);
    const auto& choice = match.choice;
    const auto& Kp = match.K;

    std::vector<std::vector<std::size_t>> per_probe(P);
    for (std::size_t idx = 0; idx < L; ++idx)
        if (choice[idx] >= 0) per_probe[static_cast<std::size_t>(choice[idx])].push_back(idx);

    const auto faces = face_nodes(g);
    const auto& interior = g.interior_nodes();
    std::vector<double> center(n);
    for (int a = 0; a < n; ++a) center[a] = 0.5 * g.box[a];

    parallel_for(P, opt.threads, [&](std::size_t p) {
        if (per_probe[p].empty()) return;
        const ProbeSpec& sp = dict[p];
        std::vector<double> K0(base[p].begin(), base[p].begin() + n);
        ComplexField wave = discrete_plane_wave(gp, K0, -1);
        const Slice phi = wave.slice(0);
        const BoundaryTrace f = BoundaryTrace::of(wave);
        const Measurement m = src.measure(phi, f, probe_key(sp));

        const std::size_t N = g.nt;
        std::vector<cplx> uN(interior.size()), u0(interior.size());
        std::vector<std::array<int, 3>> ipos(interior.size());
        int multi[3];
        for (std::size_t j = 0; j < interior.size(); ++j) {
            uN[j] = m.final_state[interior[j]];
            u0[j] = phi[interior[j]];
            g.unravel(interior[j], multi);
            for (int a = 0; a < n; ++a) ipos[j][a] = multi[a];
        }
        // half-level averages, stored face-major for the time transforms
        const std::size_t F = faces.size();
        std::vector<cplx> Gbar(F * N), Ubar(F * N);
        std::vector<std::array<int, 3>> fpos(F);
        for (std::size_t q = 0; q < F; ++q) {
            const std::size_t s = faces[q].slot;
            for (std::size_t k = 0; k < N; ++k) {
                Gbar[q * N + k] = 0.5 * (m.flux.lateral[k][s] + m.flux.lateral[k + 1][s]);
                Ubar[q * N + k] = 0.5 * (f.lateral[k][s] + f.lateral[k + 1][s]);
            }
            g.unravel(faces[q].node, multi);
            for (int a = 0; a < n; ++a) fpos[q][a] = multi[a];
        }
        const double c1 = std::cos(0.5 * theta0[p]);

        std::vector<std::vector<cplx>> E(n);
        for (std::size_t idx : per_probe[p]) {
            const double* K = Kp[idx].data();
            for (int a = 0; a < n; ++a) {
                E[a].resize(g.m[a]);
                for (int i = 0; i < g.m[a]; ++i) E[a][i] = std::polar(1.0, K[a] * g.coord(a, i));
            }
            const double thv = disc_theta(g, K);
            const cplx c = std::polar(1.0, thv);
            const cplx cN = std::polar(1.0, thv * static_cast<double>(N));

            cplx SN{}, S0{};
            for (std::size_t j = 0; j < interior.size(); ++j) {
                cplx e = E[0][ipos[j][0]];
                for (int a = 1; a < n; ++a) e *= E[a][ipos[j][a]];
                SN += e * uN[j];
                S0 += e * u0[j];
            }
            cplx bsum{};
            for (std::size_t q = 0; q < F; ++q) {
                const auto& fn = faces[q];
                cplx TG{}, TU{}, pw{1.0, 0.0};
                const cplx* gb = &Gbar[q * N];
                const cplx* ub = &Ubar[q * N];
                for (std::size_t k = 0; k < N; ++k) {
                    TG += pw * gb[k];
                    TU += pw * ub[k];
                    pw *= c;
                }
                cplx e = E[0][fpos[q][0]];
                for (int a = 1; a < n; ++a) e *= E[a][fpos[q][a]];
                const cplx d = (1.0 - std::polar(1.0, -K[fn.axis] * fn.dir * g.h[fn.axis])) / g.h[fn.axis];
                bsum += fn.measure * e * (TG - d * TU);
            }
            bsum *= g.dt * 0.5 * (1.0 + c);
            const cplx I = -kI * g.cell_volume() * (cN * SN - S0) - bsum;

            const double C = c1 * std::cos(0.5 * thv);
            double shift = 0.0;
            for (int a = 0; a < n; ++a) shift += (K[a] - base[p][a] - out.xi(idx, a)) * center[a];
            out.values[idx] = I / C * std::polar(1.0, -shift);
            out.eta[idx] = match.eta[idx];
            out.populated[idx] = 1;
            out.lambda_used[idx] = sp.lambda;
        }
    });

    if (report) {
        report->probes = P;
        report->unreached = L - out.count_populated();
        report->lambdas.clear();
        for (const auto& sp : dict)
            if (report->lambdas.empty() || report->lambdas.back() != sp.lambda) report->lambdas.push_back(sp.lambda);
        double mx = 0.0, sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t idx = 0; idx < L; ++idx)
            if (out.populated[idx]) mx = std::max(mx, out.eta[idx]), sum += out.eta[idx], ++cnt;
        report->max_eta = mx;
        report->mean_eta = cnt ? sum / cnt : 0.0;
    }
    return out;
}

// ---- inversion ----------------------------------------------------------------------

InversionResult invert_q(const FourierSampleSet& samples, bool zero_fill) {
    if (!samples.grid) throw ReconstructionError("empty sample set");
    FourierSampleSet s = samples;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!s.populated[i]) {
            if (!zero_fill) throw ReconstructionError("incomplete Fourier lattice");
            s.values[i] = 0.0;
        }
    const std::vector<cplx> halves = invert_lattice(s);
    double re = 0.0, im = 0.0;
    std::vector<double> real(halves.size());
    for (std::size_t i = 0; i < halves.size(); ++i) {
        real[i] = halves[i].real();
        re += halves[i].real() * halves[i].real();
        im += halves[i].imag() * halves[i].imag();
    }
    InversionResult r;
    r.q = full_levels_from_halves(s.grid, real);
    r.imag_ratio = re > 0.0 ? std::sqrt(im / re) : (im > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    return r;
}

QErrorReport q_error(const Potential& recovered, const Potential& truth, double imag_ratio) {
    QErrorReport e;
    e.l2_rel = relative_l2(recovered, truth);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        num = std::max(num, std::abs(recovered.data[i] - truth.data[i]));
        den = std::max(den, std::abs(truth.data[i]));
    }
    e.linf_rel = den > 0.0 ? num / den : num;
    e.imag_ratio = imag_ratio;
    return e;
}

}  // namespace dsi
