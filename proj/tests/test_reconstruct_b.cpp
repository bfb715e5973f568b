#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "dsi/reconstruct_b.hpp"
#include "support.hpp"

using namespace dsi;
using namespace testsupport;

namespace {

Measurement random_measurement(const GridPtr& g, std::mt19937& rng) {
    std::normal_distribution<double> nd;
    Measurement m(g);
    for (auto& z : m.final_state) z = {nd(rng), nd(rng)};
    for (auto& lv : m.flux.lateral)
        for (auto& z : lv) z = {nd(rng), nd(rng)};
    return m;
}

/// Random smooth vector field: separable cosines in space and time.
RealVectorField random_b(const GridPtr& g, std::mt19937& rng) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    RealVectorField b(g);
    int multi[3];
    for (int a = 0; a < g->n; ++a) {
        const double f1 = 3.0 * U(rng), f2 = 3.0 * U(rng), ft = 2.0 * U(rng), c = U(rng);
        for (std::size_t k = 0; k < g->levels(); ++k)
            for (std::size_t i = 0; i < g->nodes(); ++i) {
                g->unravel(i, multi);
                const double x = g->coord(0, multi[0]), y = g->coord(1, multi[1]);
                b.comp[a].at(k, i) = c + std::cos(f1 * x + f2 * y + ft * g->time(static_cast<int>(k)));
            }
    }
    return b;
}

struct Inputs {
    ComplexField a, b, v;
};

Inputs random_inputs(const GridPtr& g, const Potential& q, std::mt19937& rng) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<double> Ka{6.0 * U(rng), 6.0 * U(rng)}, Kb{6.0 * U(rng), 6.0 * U(rng)}, Kv{3.0 * U(rng), 3.0 * U(rng)};
    auto V = discrete_plane_wave(g, Kv, +1);
    return {discrete_plane_wave(g, Ka, -1), discrete_plane_wave(g, Kb, -1),
            solve_adjoint(q, V.slice(0), BoundaryTrace::of(V))};
}

}  // namespace

TEST_CASE("polarization recovers the cross term of manufactured quadratic data") {
    auto g = make_unit_grid(2, 9, 6);
    std::mt19937 rng(1);
    auto A = random_measurement(g, rng), B = random_measurement(g, rng), X = random_measurement(g, rng),
         Y = random_measurement(g, rng);
    auto M = [&](cplx c) { return A + std::norm(c) * B + std::conj(c) * X + c * Y; };
    auto d = polarize(M(1.0), M(-1.0), M(I1), M(-I1));
    CHECK((d.cross - X).norm() <= 1e-14 * X.norm());
}

TEST_CASE("b identity: boundary assembly matches the interior quadrature") {
    auto g = make_unit_grid(2, 21, 20);
    std::mt19937 rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        auto q = bump_potential(g, 2.0 * trial);
        auto b = trial % 2 ? b_bench(g) : random_b(g, rng);
        auto in = random_inputs(g, q, rng);
        DirectBSource src(q, b);
        auto d = polarize(src, in.a.slice(0), BoundaryTrace::of(in.a), in.b.slice(0), BoundaryTrace::of(in.b), "t");
        const cplx boundary = assemble_b_identity(d.cross, in.v);
        const cplx interior = b_identity_interior(b, solve_linear(q, in.a.slice(0), BoundaryTrace::of(in.a)),
                                                  solve_linear(q, in.b.slice(0), BoundaryTrace::of(in.b)), in.v);
        CHECK(std::abs(boundary - interior) <= 1e-3 * std::abs(interior));
    }
}

TEST_CASE("b identity: zero coefficient, quadratic scaling, grid mismatch") {
    auto g = make_unit_grid(2, 13, 12);
    std::mt19937 rng(3);
    auto q = bump_potential(g, 1.0);
    auto in = random_inputs(g, q, rng);
    RealVectorField zero(g);
    DirectBSource z(q, zero);
    auto d0 = polarize(z, in.a.slice(0), BoundaryTrace::of(in.a), in.b.slice(0), BoundaryTrace::of(in.b), "z");
    CHECK(std::abs(assemble_b_identity(d0.cross, in.v)) <= 1e-14);

    auto b = smooth_b(g);
    DirectBSource src(q, b);
    // u1 -> 2 u1 in a single-input measurement scales the quadratic data by 4
    auto m1 = src.measure(in.a.slice(0), BoundaryTrace::of(in.a), "s");
    auto m2 = src.measure(scaled(in.a.slice(0), 2.0), scaled(BoundaryTrace::of(in.a), 2.0), "s");
    const cplx v1 = assemble_b_identity(m1, in.v), v2 = assemble_b_identity(m2, in.v);
    CHECK(std::abs(v2 - 4.0 * v1) <= 1e-11 * std::abs(v1));

    auto g2 = make_unit_grid(2, 11, 12);
    CHECK_THROWS(assemble_b_identity(m1, ComplexField(g2)));
}

TEST_CASE("transposed cross functional equals the polarized measurement") {
    auto g = make_unit_grid(2, 17, 16);
    std::mt19937 rng(5);
    auto q = bump_potential(g, 2.0);
    auto b = random_b(g, rng);
    TransposedCrossSource fast(q, b);
    DirectBSource direct(q, b);
    for (int trial = 0; trial < 3; ++trial) {
        auto in = random_inputs(g, q, rng);
        // the test field need not solve the true adjoint problem
        ComplexField w = in.v;
        for (auto& z : w.data) z *= 1.0 + 0.1 * std::sin(std::abs(z) * 7.0);
        auto reps = fast.represent(in.b.slice(0), BoundaryTrace::of(in.b), {in.v, w});
        auto d = polarize(direct, in.a.slice(0), BoundaryTrace::of(in.a), in.b.slice(0), BoundaryTrace::of(in.b), "t");
        const cplx e1 = assemble_b_identity(d.cross, in.v), e2 = assemble_b_identity(d.cross, w);
        CHECK(std::abs(reps[0].pair(in.a.slice(0), BoundaryTrace::of(in.a)) - e1) <= 1e-9 * std::abs(e1));
        CHECK(std::abs(reps[1].pair(in.a.slice(0), BoundaryTrace::of(in.a)) - e2) <= 1e-9 * std::abs(e2));
    }
}

// CN is only near-dispersionless for small |K|^2 dt; the literal pair is off-shell otherwise.
TEST_CASE("literal pair samples B_v of a constant field and a plane wave") {
    auto g = make_unit_grid(2, 33, 512);
    auto q = zero_potential(g);
    RealVectorField b(g);
    std::fill(b.comp[0].data.begin(), b.comp[0].data.end(), 0.6);
    std::fill(b.comp[1].data.begin(), b.comp[1].data.end(), -0.8);
    std::vector<double> Kv{0.0, 2.0};
    auto v = discrete_plane_wave(g, Kv, +1);
    DirectBSource src(q, b);

    // closed form: B = i (b . s) e^{i Kv.x} e^{i theta_v (k + 1/2)} cos(theta_v / 2), s = sin(Kv h) / h
    const double th = disc_theta(*g, Kv.data());
    const double bs = 0.6 * std::sin(Kv[0] * g->h[0]) / g->h[0] - 0.8 * std::sin(Kv[1] * g->h[1]) / g->h[1];
    auto exact = [&](double tau, const std::vector<double>& xi) {
        cplx st{}, sx{1.0, 0.0};
        for (int k = 0; k < g->nt; ++k) st += std::polar(1.0, (tau * g->dt + th) * (k + 0.5));
        for (int a = 0; a < 2; ++a) {
            cplx s{};
            for (int j = 1; j + 1 < g->m[a]; ++j) s += std::polar(1.0, (xi[a] + Kv[a]) * g->coord(a, j));
            sx *= s;
        }
        return g->dt * g->cell_volume() * I1 * bs * std::cos(0.5 * th) * st * sx;
    };
    const double tau = -th / g->dt;
    const std::vector<double> xi{0.0, -2.0}, omega{1.0, 0.0};
    const cplx peak = exact(tau, xi);
    const cplx got = sample_bv_fourier(src, v, {8.0}, omega, tau, xi);
    MESSAGE("literal " << got << " exact " << peak);
    CHECK(std::abs(got - peak) <= 0.05 * std::abs(peak));

    const double tau2 = tau + 2.0 * M_PI;
    const cplx off = exact(tau2, xi);
    const cplx got2 = sample_bv_fourier(src, v, {8.0}, omega, tau2, xi);
    CHECK(std::abs(got2 - off) <= 0.05 * std::abs(peak));

    RealVectorField zero(g);
    DirectBSource z(q, zero);
    CHECK(std::abs(sample_bv_fourier(z, v, {8.0}, omega, tau, xi)) <= 1e-14);
    CHECK_THROWS_AS(sample_bv_fourier(src, v, {8.0}, {0.0, 1.0}, tau, xi), ReconstructionError);
}

TEST_CASE("matched B_v sampling with exact plane waves") {
    auto g = make_unit_grid(2, 24, 32);
    auto q = zero_potential(g);
    auto b = b_bench(g);
    auto fam = build_vj_family(q, 3.0, {{1.0, 0.0}, {0.0, 1.0}});
    std::vector<ComplexField> vs{fam.members[0].field};
    TransposedCrossSource src(q, b);
    BSamplingOptions opt;
    opt.directions = 32;
    opt.eta_max = 4.0;
    BSamplingReport rep;
    auto S = sample_bv_matched(src, vs, opt, &rep);
    auto T = lattice_of_halves(g, bv_of(b, vs[0]).halves);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < T.size(); ++i) {
        den += std::norm(T.values[i]);
        if (S[0].populated[i]) num += std::norm(S[0].values[i] - T.values[i]);
    }
    MESSAGE("populated lattice error " << std::sqrt(num / den) << ", unreached " << rep.unreached);
    CHECK(std::sqrt(num / den) <= 0.05);

    RealVectorField zero(g);
    TransposedCrossSource z(q, zero);
    auto S0 = sample_bv_matched(z, vs, opt);
    double mx = 0.0;
    for (const auto& v : S0[0].values) mx = std::max(mx, std::abs(v));
    CHECK(mx <= 1e-14);
}

TEST_CASE("B_v inversion") {
    auto g = make_unit_grid(2, 16, 12);
    FourierSampleSet zero(g);
    auto r0 = recover_bv(zero);
    for (const auto& z : r0.halves) CHECK(std::abs(z) == 0.0);

    auto fam = build_vj_family(bump_potential(g, 1.0), 3.0, {{1.0, 0.0}, {0.0, 1.0}});
    auto truth = bv_of(smooth_b(g), fam.members[1].field);
    auto rec = recover_bv(lattice_of_halves(g, truth.halves), 1);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.halves.size(); ++i)
        num += std::norm(rec.halves[i] - truth.halves[i]), den += std::norm(truth.halves[i]);
    CHECK(std::sqrt(num / den) <= 0.02);
    CHECK(rec.member == 1);
}

TEST_CASE("pointwise solve: analytic plane-wave family") {
    auto g = make_unit_grid(2, 17, 8);
    auto fam = build_vj_family(zero_potential(g), 4.0, {{1.0, 0.0}, {0.0, 1.0}});
    RealVectorField b(g);
    std::fill(b.comp[0].data.begin(), b.comp[0].data.end(), 0.7);
    std::fill(b.comp[1].data.begin(), b.comp[1].data.end(), -0.2);
    std::vector<BvField> bv;
    for (const auto& m : fam.members) bv.push_back(bv_of(b, m.field));
    auto res = solve_pointwise_b(bv, fam);
    double err = 0.0;
    for (int a = 0; a < 2; ++a)
        for (double x : res.b.comp[a].data) err = std::max(err, std::abs(x - (a == 0 ? 0.7 : -0.2)));
    CHECK(err <= 1e-6);
    CHECK(res.coverage == 1.0);
    CHECK(res.imag_ratio <= 1e-10);

    // b = 0
    RealVectorField zero(g);
    std::vector<BvField> bz;
    for (const auto& m : fam.members) bz.push_back(bv_of(zero, m.field));
    auto r0 = solve_pointwise_b(bz, fam);
    CHECK(r0.b.comp[0].max_abs() == 0.0);

    // over-determined family, least squares
    auto fam3 = build_vj_family(zero_potential(g), 4.0, {{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}});
    std::vector<BvField> bv3;
    for (const auto& m : fam3.members) bv3.push_back(bv_of(b, m.field));
    auto r3 = solve_pointwise_b(bv3, fam3);
    err = 0.0;
    for (double x : r3.b.comp[1].data) err = std::max(err, std::abs(x + 0.2));
    CHECK(err <= 1e-6);

    CHECK_THROWS_AS(solve_pointwise_b({bv[0]}, fam), ReconstructionError);
}

TEST_CASE("pointwise solve: smooth field, threshold and neighbour fill") {
    auto g = make_unit_grid(2, 25, 16);
    auto fam = build_vj_family(bump_potential(g, 3.0), 6.0, {{1.0, 0.0}, {0.0, 1.0}}, 1);
    auto b = smooth_b(g);
    std::vector<BvField> bv;
    for (const auto& m : fam.members) bv.push_back(bv_of(b, m.field));
    auto res = solve_pointwise_b(bv, fam);
    // half -> full level averaging costs O(dt^2)
    CHECK(b_error(res.b, b).l2_rel <= 5e-3);

    // determinants of the time-averaged gradients, in units of lambda^n |det omega|
    const double unit = fam.lambda * fam.lambda * fam.omega_det;
    double lo = 1e300, hi = 0.0;
    for (int k = 0; k < g->nt; ++k) {
        auto g0 = gradient(fam.members[0].field, k), g1 = gradient(fam.members[0].field, k + 1);
        auto h0 = gradient(fam.members[1].field, k), h1 = gradient(fam.members[1].field, k + 1);
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            const cplx a00 = 0.5 * (g0[0][i] + g1[0][i]), a01 = 0.5 * (g0[1][i] + g1[1][i]);
            const cplx a10 = 0.5 * (h0[0][i] + h1[0][i]), a11 = 0.5 * (h0[1][i] + h1[1][i]);
            const double r = std::abs(a00 * a11 - a01 * a10) / unit;
            lo = std::min(lo, r), hi = std::max(hi, r);
        }
    }
    PointwiseOptions po;
    po.det_factor = lo + 0.02 * (hi - lo);
    po.max_flagged = 1.0;
    auto part = solve_pointwise_b(bv, fam, po);
    std::size_t flagged = 0;
    for (auto f : part.flagged) flagged += f;
    MESSAGE("flagged " << flagged << ", coverage " << part.coverage);
    CHECK(flagged > 0);
    CHECK(part.coverage == doctest::Approx(1.0 - double(flagged) / part.flagged.size()));
    CHECK(part.b.comp[0].all_finite());
    CHECK(part.b.comp[1].all_finite());

    po.det_factor = 10.0 * hi;
    po.max_flagged = 0.2;
    CHECK_THROWS_AS(solve_pointwise_b(bv, fam, po), ReconstructionError);
}
