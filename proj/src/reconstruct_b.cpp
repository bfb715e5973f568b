#include "dsi/reconstruct_b.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <array>
#include <deque>
#include <limits>

#include "dsi/parallel.hpp"

namespace dsi {

namespace {

constexpr cplx kI{0.0, 1.0};

struct FaceSlot {
    std::size_t slot;
    std::size_t node;
    std::size_t inner;
    int axis;
    int dir;
    double measure;
};

std::vector<FaceSlot> face_slots(const SpaceTimeGrid& g) {
    std::vector<FaceSlot> out;
    const auto& bn = g.boundary_nodes();
    int multi[3];
    for (std::size_t s = 0; s < bn.size(); ++s) {
        if (g.face_count(bn[s]) != 1) continue;
        g.unravel(bn[s], multi);
        FaceSlot fs{s, bn[s], 0, 0, 0, 0.0};
        for (int a = 0; a < g.n; ++a) {
            if (multi[a] == 0) fs.axis = a, fs.dir = -1;
            if (multi[a] == g.m[a] - 1) fs.axis = a, fs.dir = +1;
        }
        fs.inner = fs.dir > 0 ? bn[s] - g.stride(fs.axis) : bn[s] + g.stride(fs.axis);
        fs.measure = g.face_measure(fs.axis);
        out.push_back(fs);
    }
    return out;
}

std::vector<double> box_center(const SpaceTimeGrid& g) {
    std::vector<double> c(g.n);
    for (int a = 0; a < g.n; ++a) c[a] = 0.5 * g.box[a];
    return c;
}

/// Newton along K/|K| for theta(K) = theta0 + target with K = base + xi.
bool match_one(const SpaceTimeGrid& g, const double* base, double theta0, const double* xi, double target,
               double eta_max, double* Kout, double* sout) {
    const int n = g.n;
    double K[3], u[3], Ks[3], kn = 0.0;
    for (int a = 0; a < n; ++a) K[a] = base[a] + xi[a], kn += K[a] * K[a];
    kn = std::sqrt(kn);
    if (kn < 1e-12) return false;
    for (int a = 0; a < n; ++a) u[a] = K[a] / kn;
    double f = disc_theta(g, K) - theta0 - target;
    const double sl0 = disc_theta_slope(g, K, u);
    if (std::abs(f) > 1.0 || std::abs(sl0) < 1e-12 || std::abs(f / sl0) > 2.0 * eta_max) return false;
    double s = 0.0;
    for (int it = 0; it < 30; ++it) {
        for (int a = 0; a < n; ++a) Ks[a] = K[a] + s * u[a];
        f = disc_theta(g, Ks) - theta0 - target;
        if (std::abs(f) < 1e-14) break;
        const double sl = disc_theta_slope(g, Ks, u);
        if (std::abs(sl) < 1e-14) break;
        s -= f / sl;
    }
    if (std::abs(f) > 1e-11 || std::abs(s) > eta_max) return false;
    for (int a = 0; a < n; ++a) Kout[a] = K[a] + s * u[a];
    *sout = s;
    return true;
}

struct Pick {
    int probe = -1;
    double weight = 0.0;
    std::array<double, 3> K{};
    double eta = 0.0;
};

constexpr int kMaxPicks = 4;
using Picks = std::array<Pick, kMaxPicks>;

/// Dictionary probes for one lattice sample. Each reachable probe samples the transform at xi + eta_p;
/// among the few smallest corrections of the largest rung that has them, n + 1 probes whose eta_p
/// surround the origin are combined with barycentric weights, which cancels the first-order shift
/// error. Without such a simplex the single smallest correction is used.
std::vector<Picks> select_probes(const FourierSampleSet& lat, const std::vector<ProbeSpec>& dict, double eta_max,
                                 int threads) {
    const auto& g = *lat.grid;
    const int n = g.n;
    const std::size_t P = dict.size(), L = lat.size();
    std::vector<std::array<double, 3>> base(P);
    std::vector<double> theta0(P);
    std::vector<std::size_t> rung_start{0};
    for (std::size_t p = 0; p < P; ++p) {
        for (int a = 0; a < n; ++a) base[p][a] = dict[p].lambda * dict[p].omega[a];
        theta0[p] = disc_theta(g, base[p].data());
        if (p > 0 && dict[p].lambda != dict[p - 1].lambda) rung_start.push_back(p);
    }
    rung_start.push_back(P);
    constexpr std::size_t kPool = 8;
    std::vector<Picks> out(L);
    const std::size_t chunk = 1024;
    parallel_for((L + chunk - 1) / chunk, threads, [&](std::size_t c) {
        double xi[3], K[3], s;
        struct Cand {
            std::size_t p;
            std::array<double, 3> K;
            std::array<double, 3> eta;
            double norm;
        };
        std::vector<Cand> cand;
        Eigen::MatrixXd M(n + 1, n + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
        rhs(n) = 1.0;
        for (std::size_t idx = c * chunk; idx < std::min(L, (c + 1) * chunk); ++idx) {
            const double target = -lat.tau(idx) * g.dt;
            for (int a = 0; a < n; ++a) xi[a] = -lat.xi(idx, a);
            Pick single;
            bool done = false;
            for (std::size_t r = 0; r + 1 < rung_start.size() && !done; ++r) {
                cand.clear();
                for (std::size_t p = rung_start[r]; p < rung_start[r + 1]; ++p) {
                    if (!match_one(g, base[p].data(), theta0[p], xi, target, eta_max, K, &s)) continue;
                    Cand cd{p, {}, {}, 0.0};
                    double nn = 0.0;
                    for (int a = 0; a < n; ++a) {
                        cd.K[a] = K[a];
                        cd.eta[a] = base[p][a] - K[a] + xi[a];  // (K2 - K1) - xi
                        nn += cd.eta[a] * cd.eta[a];
                    }
                    cd.norm = std::sqrt(nn);
                    cand.push_back(cd);
                }
                if (cand.empty()) continue;
                std::sort(cand.begin(), cand.end(), [](const Cand& x, const Cand& y) {
                    return x.norm < y.norm || (x.norm == y.norm && x.p < y.p);
                });
                if (single.probe < 0) single = Pick{static_cast<int>(cand[0].p), 1.0, cand[0].K, cand[0].norm};
                const std::size_t m = std::min(kPool, cand.size());
                if (m < static_cast<std::size_t>(n + 1)) continue;
                double best = std::numeric_limits<double>::infinity();
                Picks bp;
                std::array<std::size_t, 4> sel{};
                // all (n+1)-subsets of the pool
                std::array<std::size_t, 4> ix{};
                for (int t = 0; t <= n; ++t) ix[t] = static_cast<std::size_t>(t);
                for (;;) {
                    for (int t = 0; t <= n; ++t) {
                        for (int a = 0; a < n; ++a) M(a, t) = cand[ix[t]].eta[a];
                        M(n, t) = 1.0;
                    }
                    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
                    if (lu.isInvertible()) {
                        Eigen::VectorXd w = lu.solve(rhs);
                        double cost = 0.0;
                        bool inside = true;
                        for (int t = 0; t <= n; ++t) {
                            if (w(t) < -1e-9) inside = false;
                            if (w(t) > 1e-12) cost = std::max(cost, cand[ix[t]].norm);
                        }
                        if (inside && cost < best) {
                            best = cost;
                            sel = ix;
                            for (int t = 0; t <= n; ++t)
                                bp[t] = Pick{static_cast<int>(cand[ix[t]].p), w(t), cand[ix[t]].K, cand[ix[t]].norm};
                        }
                    }
                    int t = n;
                    while (t >= 0 && ix[t] == m - 1 - static_cast<std::size_t>(n - t)) --t;
                    if (t < 0) break;
                    ++ix[t];
                    for (int u = t + 1; u <= n; ++u) ix[u] = ix[u - 1] + 1;
                }
                (void)sel;
                if (best < std::numeric_limits<double>::infinity()) {
                    // drop zero-weight members
                    Picks keep;
                    int k = 0;
                    for (int t = 0; t <= n; ++t)
                        if (std::abs(bp[t].weight) > 1e-12) keep[k++] = bp[t];
                    out[idx] = keep;
                    done = true;
                }
            }
            if (!done && single.probe >= 0) out[idx][0] = single;
        }
    });
    return out;
}

}  // namespace

// ---- data sources -------------------------------------------------------------------

DirectBSource::DirectBSource(Potential q, RealVectorField b, SolverOptions opt)
    : q_(std::move(q)), b_(std::move(b)), opt_(opt) {
    require_same_grid(q_.grid, b_.grid, "b source");
}

Measurement DirectBSource::measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const {
    Measurement m = lambda_b(q_, b_, phi, f, false, opt_);
    m.input_id = key;
    return m;
}

ExtractedBSource::ExtractedBSource(Potential q, NonlinearitySpec nl, double eps, PicardOptions opt)
    : q_(std::move(q)), nl_(std::move(nl)), eps_(eps), opt_(opt) {
    if (!(eps_ > 0.0)) throw ReconstructionError("extraction eps must be positive");
}

Measurement ExtractedBSource::measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const {
    auto m1 = apply_io_map(q_, nl_, phi, f, eps_, opt_, key);
    auto m2 = apply_io_map(q_, nl_, phi, f, 2.0 * eps_, opt_, key);
    Measurement g2 = extract_linearizations(m1, m2).g2;
    g2.input_id = key;
    return g2;
}

PolarizedDatum polarize(const Measurement& p, const Measurement& m, const Measurement& pi, const Measurement& mi) {
    require_same_grid(p.grid, m.grid, "polarization");
    require_same_grid(p.grid, pi.grid, "polarization");
    require_same_grid(p.grid, mi.grid, "polarization");
    PolarizedDatum d{p, m, pi, mi, 0.25 * ((p - m) + kI * (pi - mi))};
    d.cross.input_id = p.input_id;
    return d;
}

PolarizedDatum polarize(const BDataSource& src, const Slice& phi_a, const BoundaryTrace& f_a, const Slice& phi_b,
                        const BoundaryTrace& f_b, const std::string& key) {
    const cplx cs[4] = {1.0, -1.0, kI, -kI};
    const char* tags[4] = {"_p", "_m", "_pi", "_mi"};
    std::vector<Measurement> ms;
    for (int j = 0; j < 4; ++j) {
        Slice phi(phi_a);
        for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += cs[j] * phi_b[i];
        BoundaryTrace f = f_a;
        for (std::size_t k = 0; k < f.lateral.size(); ++k)
            for (std::size_t s = 0; s < f.lateral[k].size(); ++s) f.lateral[k][s] += cs[j] * f_b.lateral[k][s];
        for (std::size_t i = 0; i < f.final_slice.size(); ++i) f.final_slice[i] += cs[j] * f_b.final_slice[i];
        ms.push_back(src.measure(phi, f, key + tags[j]));
    }
    auto d = polarize(ms[0], ms[1], ms[2], ms[3]);
    d.cross.input_id = key;
    return d;
}

// ---- identity -----------------------------------------------------------------------

cplx assemble_b_identity(const Measurement& cross, const ComplexField& v) {
    require_same_grid(cross.grid, v.grid, "b identity");
    const auto& g = *v.grid;
    const std::size_t N = g.nt;
    cplx vol{};
    for (std::size_t i : g.interior_nodes()) vol += cross.final_state[i] * v.at(N, i);
    cplx bsum{};
    for (const auto& fs : face_slots(g)) {
        cplx acc{};
        for (std::size_t k = 0; k < N; ++k)
            acc += 0.25 * (cross.flux.lateral[k][fs.slot] + cross.flux.lateral[k + 1][fs.slot]) *
                   (v.at(k, fs.node) + v.at(k + 1, fs.node));
        bsum += fs.measure * acc;
    }
    return -kI * g.cell_volume() * vol - g.dt * bsum;
}

TransposedCrossSource::TransposedCrossSource(Potential q, RealVectorField b, SolverOptions opt)
    : q_(std::move(q)), b_(std::move(b)), opt_(opt) {
    require_same_grid(q_.grid, b_.grid, "cross source");
}

std::vector<DataRepresenter> TransposedCrossSource::represent(const Slice& phi_b, const BoundaryTrace& f_b,
                                                              const std::vector<ComplexField>& vs) const {
    const GridPtr gp = q_.grid;
    const auto& g = *gp;
    const int n = g.n;
    const std::size_t N = g.nt, nodes = g.nodes();
    const ComplexField ub = solve_linear(q_, phi_b, f_b, opt_);
    std::vector<VectorSlice> gub(g.levels());
    for (std::size_t k = 0; k < g.levels(); ++k) {
        gub[k] = gradient(ub, k);
        for (auto& c : gub[k])
            for (auto& z : c) z = std::conj(z);
    }
    const auto faces = face_slots(g);

    std::vector<DataRepresenter> out;
    for (const auto& v : vs) {
        require_same_grid(v.grid, gp, "cross source");
        // weights on the measured data of u2
        std::vector<std::vector<cplx>> gamma(g.levels(), std::vector<cplx>(faces.size()));
        for (std::size_t q = 0; q < faces.size(); ++q) {
            const std::size_t b = faces[q].node;
            for (std::size_t k = 0; k <= N; ++k) {
                cplx w{};
                if (k < N) w += 0.25 * (v.at(k, b) + v.at(k + 1, b));
                if (k >= 1) w += 0.25 * (v.at(k - 1, b) + v.at(k, b));
                gamma[k][q] = -g.dt * faces[q].measure * w;
            }
        }
        ComplexField k2(gp);
        for (std::size_t i : g.interior_nodes()) k2.at(N, i) = -kI * g.cell_volume() * v.at(N, i);
        for (std::size_t k = 0; k <= N; ++k)
            for (std::size_t q = 0; q < faces.size(); ++q)
                k2.at(k, faces[q].inner) -= gamma[k][q] / g.h[faces[q].axis];
        const DataRepresenter rep2 = transpose_data_map(q_, k2, opt_);

        // weights on J, then on grad u_a, then on u_a
        ComplexField ka(gp);
        Slice w(nodes);
        VectorSlice beta(n, Slice(nodes)), c(n, Slice(nodes));
        for (std::size_t k = 0; k <= N; ++k) {
            for (std::size_t i = 0; i < nodes; ++i) {
                cplx s{};
                if (k >= 1) s += rep2.source[k - 1][i];
                if (k < N) s += rep2.source[k][i];
                w[i] = 0.5 * s;
            }
            for (auto& bt : beta) std::fill(bt.begin(), bt.end(), cplx{});
            for (std::size_t x : g.interior_nodes())
                for (int a = 0; a < n; ++a) {
                    const cplx d = w[x] / (2.0 * g.h[a]);
                    beta[a][x + g.stride(a)] += d;
                    beta[a][x - g.stride(a)] -= d;
                }
            for (std::size_t q = 0; q < faces.size(); ++q) {
                const cplx d = -0.5 * static_cast<double>(faces[q].dir) * gamma[k][q];
                beta[faces[q].axis][faces[q].node] += d;
                beta[faces[q].axis][faces[q].inner] += d;
            }
            for (std::size_t i = 0; i < nodes; ++i) {
                cplx s{};
                for (int a = 0; a < n; ++a) s += beta[a][i] * b_.comp[a].at(k, i);
                for (int a = 0; a < n; ++a) c[a][i] = gub[k][a][i] * s;
            }
            ka.set_slice(k, gradient_transpose(gp, c));
        }
        out.push_back(transpose_data_map(q_, ka, opt_));
    }
    return out;
}

// ---- B_v sampling -------------------------------------------------------------------

BvField bv_of(const RealVectorField& b, const ComplexField& v) {
    require_same_grid(b.grid, v.grid, "B_v");
    const GridPtr gp = v.grid;
    const auto& g = *gp;
    const std::size_t nodes = g.nodes();
    BvField out{gp, std::vector<cplx>(static_cast<std::size_t>(g.nt) * nodes), -1};
    VectorSlice prev = gradient(v, 0);
    for (int k = 0; k < g.nt; ++k) {
        VectorSlice next = gradient(v, k + 1);
        for (std::size_t i = 0; i < nodes; ++i) {
            cplx s{};
            for (int a = 0; a < g.n; ++a)
                s += 0.5 * (b.comp[a].at(k, i) + b.comp[a].at(k + 1, i)) * 0.5 * (prev[a][i] + next[a][i]);
            out.halves[k * nodes + i] = s;
        }
        prev = std::move(next);
    }
    return out;
}

cplx sample_bv_fourier(const BDataSource& src, const ComplexField& v, const std::vector<double>& lambdas,
                       const std::vector<double>& omega, double tau, const std::vector<double>& xi) {
    const GridPtr gp = src.grid();
    const auto& g = *gp;
    if (lambdas.empty()) throw ReconstructionError("no lambda given");
    if (static_cast<int>(omega.size()) != g.n || static_cast<int>(xi.size()) != g.n)
        throw ReconstructionError("direction has the wrong dimension");
    double dot = 0.0, on = 0.0;
    for (int a = 0; a < g.n; ++a) dot += omega[a] * xi[a], on += omega[a] * omega[a];
    if (std::abs(dot) > 1e-9 * std::max(1.0, std::sqrt(on))) throw ReconstructionError("omega must be orthogonal to xi");

    std::vector<cplx> vals;
    for (double lam : lambdas) {
        check_resolution(g, lam);
        std::vector<double> K(g.n);
        for (int a = 0; a < g.n; ++a) K[a] = lam * omega[a] / std::sqrt(on);
        ComplexField P = discrete_plane_wave(gp, K, -1);
        ComplexField Pa(P);
        int multi[3];
        for (std::size_t k = 0; k < g.levels(); ++k)
            for (std::size_t i = 0; i < g.nodes(); ++i) {
                g.unravel(i, multi);
                double ph = tau * g.time(static_cast<int>(k));
                for (int a = 0; a < g.n; ++a) ph += xi[a] * g.coord(a, multi[a]);
                Pa.at(k, i) *= std::polar(1.0, ph);
            }
        auto d = polarize(src, Pa.slice(0), BoundaryTrace::of(Pa), P.slice(0), BoundaryTrace::of(P), "literal");
        double W = 0.0;
        for (int a = 0; a < g.n; ++a) W += std::pow(std::sin(K[a] * g.h[a]) / g.h[a], 2);
        vals.push_back(assemble_b_identity(d.cross, v) / (W * std::cos(0.5 * tau * g.dt)));
    }
    if (vals.size() == 1) return vals[0];
    const std::size_t j = vals.size() - 1;
    const double l1 = lambdas[j - 1], l2 = lambdas[j];
    return (l2 * vals[j] - l1 * vals[j - 1]) / (l2 - l1);
}

std::vector<FourierSampleSet> sample_bv_matched(const CrossFunctionalSource& src, const std::vector<ComplexField>& vs,
                                                const BSamplingOptions& opt, BSamplingReport* report) {
    const GridPtr gp = src.grid();
    const auto& g = *gp;
    const int n = g.n;
    if (vs.empty()) throw ReconstructionError("no test fields given");
    for (const auto& v : vs) require_same_grid(v.grid, gp, "B_v sampling");

    QSamplingOptions qo;
    qo.lambdas = opt.lambdas;
    qo.directions = opt.directions;
    const auto dict = q_probe_dictionary(g, qo);
    const std::size_t P = dict.size();
    std::vector<FourierSampleSet> out(vs.size(), FourierSampleSet(gp));
    const std::size_t L = out[0].size();
    const auto picks = select_probes(out[0], dict, opt.eta_max, opt.threads);

    struct Use {
        std::size_t idx;
        int slot;
    };
    std::vector<std::vector<Use>> per_probe(P);
    for (std::size_t idx = 0; idx < L; ++idx)
        for (int s = 0; s < kMaxPicks; ++s)
            if (picks[idx][s].probe >= 0) per_probe[static_cast<std::size_t>(picks[idx][s].probe)].push_back({idx, s});

    const auto& bn = g.boundary_nodes();
    const std::size_t nodes = g.nodes(), N = g.nt, B = bn.size();
    const auto center = box_center(g);
    std::vector<std::array<int, 3>> pos(nodes);
    {
        int multi[3];
        for (std::size_t i = 0; i < nodes; ++i) {
            g.unravel(i, multi);
            for (int a = 0; a < n; ++a) pos[i][a] = multi[a];
        }
    }

    std::vector<std::vector<std::vector<cplx>>> contrib(P, std::vector<std::vector<cplx>>(vs.size()));
    parallel_for(P, opt.threads, [&](std::size_t p) {
        if (per_probe[p].empty()) return;
        std::vector<double> K2(n);
        for (int a = 0; a < n; ++a) K2[a] = dict[p].lambda * dict[p].omega[a];
        const ComplexField wave = discrete_plane_wave(gp, K2, -1);
        const auto reps = src.represent(wave.slice(0), BoundaryTrace::of(wave), vs);
        // lateral weights slot-major for Horner in time
        std::vector<std::vector<cplx>> lat(reps.size(), std::vector<cplx>(B * N));
        for (std::size_t r = 0; r < reps.size(); ++r)
            for (std::size_t s = 0; s < B; ++s)
                for (std::size_t k = 1; k <= N; ++k) lat[r][s * N + (k - 1)] = reps[r].lateral[k][s];

        std::vector<std::vector<cplx>> E(n);
        for (const auto& use : per_probe[p]) {
            const std::size_t idx = use.idx;
            const Pick& pk = picks[idx][use.slot];
            const double* K1 = pk.K.data();
            for (int a = 0; a < n; ++a) {
                E[a].resize(g.m[a]);
                for (int i = 0; i < g.m[a]; ++i) E[a][i] = std::polar(1.0, -K1[a] * g.coord(a, i));
            }
            const double th1 = disc_theta(g, K1);
            const cplx z = std::polar(1.0, -th1);
            double W = 0.0, shift = 0.0;
            for (int a = 0; a < n; ++a) {
                W += std::sin(K1[a] * g.h[a]) * std::sin(K2[a] * g.h[a]) / (g.h[a] * g.h[a]);
                shift += (K2[a] - K1[a] - out[0].xi(idx, a)) * center[a];
            }
            const double C = W * std::cos(0.5 * out[0].tau(idx) * g.dt);
            for (std::size_t r = 0; r < reps.size(); ++r) {
                cplx acc{};
                for (std::size_t i = 0; i < nodes; ++i) {
                    cplx e = E[0][pos[i][0]];
                    for (int a = 1; a < n; ++a) e *= E[a][pos[i][a]];
                    acc += reps[r].initial[i] * e;
                }
                for (std::size_t s = 0; s < B; ++s) {
                    const cplx* w = &lat[r][s * N];
                    cplx h{};
                    for (std::size_t k = N; k-- > 0;) h = h * z + w[k];
                    h *= z;  // levels start at k = 1
                    cplx e = E[0][pos[bn[s]][0]];
                    for (int a = 1; a < n; ++a) e *= E[a][pos[bn[s]][a]];
                    acc += h * e;
                }
                contrib[p][r].push_back(pk.weight * acc / C * std::polar(1.0, -shift));
            }
        }
    });

    // accumulate in probe order so the result does not depend on the thread count
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t u = 0; u < per_probe[p].size(); ++u) {
            const std::size_t idx = per_probe[p][u].idx;
            const Pick& pk = picks[idx][per_probe[p][u].slot];
            for (std::size_t r = 0; r < vs.size(); ++r) {
                out[r].values[idx] += contrib[p][r][u];
                out[r].populated[idx] = 1;
                out[r].lambda_used[idx] = dict[p].lambda;
                out[r].eta[idx] = std::max(out[r].eta[idx], pk.eta);
            }
        }

    if (report) {
        report->probes_used = 0;
        for (const auto& pp : per_probe) report->probes_used += pp.empty() ? 0 : 1;
        report->unreached = L - out[0].count_populated();
        report->max_eta = 0.0;
        for (std::size_t idx = 0; idx < L; ++idx)
            if (out[0].populated[idx]) report->max_eta = std::max(report->max_eta, out[0].eta[idx]);
    }
    return out;
}

BvField recover_bv(const FourierSampleSet& samples, int member) {
    return BvField{samples.grid, invert_lattice(samples), member};
}

// ---- pointwise solve ----------------------------------------------------------------

PointwiseResult solve_pointwise_b(const std::vector<BvField>& bv, const VjFamily& family, const PointwiseOptions& opt) {
    const std::size_t nm = family.members.size();
    if (nm == 0 || bv.size() != nm) throw ReconstructionError("need one B_v field per probe member");
    const GridPtr gp = family.members[0].field.grid;
    const auto& g = *gp;
    const int n = g.n;
    if (static_cast<int>(nm) < n) throw ReconstructionError("fewer probe members than dimensions");
    const std::size_t nodes = g.nodes(), NT = g.nt;
    for (const auto& f : bv) {
        require_same_grid(f.grid, gp, "pointwise solve");
        if (f.halves.size() != NT * nodes) throw ReconstructionError("B_v field has the wrong size");
    }

    PointwiseResult res;
    res.delta_det = opt.det_factor * std::pow(family.lambda, n) * family.omega_det;
    res.flagged.assign(NT * nodes, 0);
    std::vector<std::vector<cplx>> bh(n, std::vector<cplx>(NT * nodes));
    std::size_t accepted = 0;

    std::vector<VectorSlice> prev(nm), next(nm);
    for (std::size_t j = 0; j < nm; ++j) prev[j] = gradient(family.members[j].field, 0);
    Eigen::MatrixXcd A(nm, n);
    Eigen::VectorXcd rhs(nm);
    for (std::size_t k = 0; k < NT; ++k) {
        for (std::size_t j = 0; j < nm; ++j) next[j] = gradient(family.members[j].field, k + 1);
        for (std::size_t i = 0; i < nodes; ++i) {
            for (std::size_t j = 0; j < nm; ++j) {
                for (int a = 0; a < n; ++a) A(j, a) = 0.5 * (prev[j][a][i] + next[j][a][i]);
                rhs(j) = bv[j].halves[k * nodes + i];
            }
            const double det = static_cast<int>(nm) == n ? std::abs(A.determinant())
                                                         : std::sqrt(std::abs((A.adjoint() * A).determinant()));
            if (!(det >= res.delta_det)) {
                res.flagged[k * nodes + i] = 1;
                continue;
            }
            Eigen::VectorXcd x = static_cast<int>(nm) == n ? Eigen::VectorXcd(A.partialPivLu().solve(rhs))
                                                           : Eigen::VectorXcd(A.colPivHouseholderQr().solve(rhs));
            for (int a = 0; a < n; ++a) bh[a][k * nodes + i] = x(a);
            ++accepted;
        }
        std::swap(prev, next);
    }
    res.coverage = static_cast<double>(accepted) / static_cast<double>(NT * nodes);
    if (1.0 - res.coverage > opt.max_flagged)
        throw ReconstructionError("determinant below threshold on " + std::to_string(100.0 * (1.0 - res.coverage)) +
                                  "% of nodes");

    // nearest accepted node on the same level (breadth-first over grid neighbours)
    for (std::size_t k = 0; k < NT; ++k) {
        const unsigned char* fl = &res.flagged[k * nodes];
        std::vector<long> src(nodes, -1);
        std::deque<std::size_t> queue;
        for (std::size_t i = 0; i < nodes; ++i)
            if (!fl[i]) src[i] = static_cast<long>(i), queue.push_back(i);
        if (queue.empty()) continue;
        int multi[3];
        while (!queue.empty()) {
            const std::size_t i = queue.front();
            queue.pop_front();
            g.unravel(i, multi);
            for (int a = 0; a < n; ++a)
                for (int d : {-1, 1}) {
                    const int j = multi[a] + d;
                    if (j < 0 || j >= g.m[a]) continue;
                    const std::size_t nb = d > 0 ? i + g.stride(a) : i - g.stride(a);
                    if (src[nb] >= 0) continue;
                    src[nb] = src[i];
                    queue.push_back(nb);
                }
        }
        for (std::size_t i = 0; i < nodes; ++i)
            if (fl[i])
                for (int a = 0; a < n; ++a) bh[a][k * nodes + i] = bh[a][k * nodes + static_cast<std::size_t>(src[i])];
    }

    double re = 0.0, im = 0.0;
    res.b.grid = gp;
    for (int a = 0; a < n; ++a) {
        std::vector<double> h(NT * nodes);
        for (std::size_t t = 0; t < h.size(); ++t) {
            h[t] = bh[a][t].real();
            re += std::norm(bh[a][t].real());
            im += std::norm(bh[a][t].imag());
        }
        res.b.comp.push_back(full_levels_from_halves(gp, h));
    }
    res.imag_ratio = re > 0.0 ? std::sqrt(im / re) : 0.0;
    return res;
}

BErrorReport b_error(const RealVectorField& recovered, const RealVectorField& truth) {
    if (recovered.comp.size() != truth.comp.size()) throw ReconstructionError("component count mismatch");
    BErrorReport r;
    r.l2_rel = relative_l2(recovered, truth);
    double emax = 0.0, tmax = 0.0;
    for (std::size_t t = 0; t < truth.comp[0].data.size(); ++t) {
        double e2 = 0.0, t2 = 0.0;
        for (std::size_t a = 0; a < truth.comp.size(); ++a) {
            e2 += std::pow(recovered.comp[a].data[t] - truth.comp[a].data[t], 2);
            t2 += std::pow(truth.comp[a].data[t], 2);
        }
        emax = std::max(emax, e2);
        tmax = std::max(tmax, t2);
    }
    r.linf_rel = tmax > 0.0 ? std::sqrt(emax / tmax) : std::sqrt(emax);
    return r;
}

}  // namespace dsi
