#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <random>

#include "dsi/reconstruct_q.hpp"
#include "support.hpp"

using namespace dsi;
using namespace testsupport;

namespace {

/// Random smooth potential: a few Gaussian bumps with random centres, widths and time factors.
Potential random_potential(const GridPtr& g, std::mt19937& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    FieldDescriptor d;
    for (int b = 0; b < 3; ++b) {
        SeparableTerm t;
        t.amplitude = 4.0 * (U(rng) - 0.5);
        t.time = {Factor1D::Kind::cosine, 6.0 * U(rng), 6.0 * U(rng)};
        for (int a = 0; a < g->n; ++a) t.space.push_back({Factor1D::Kind::gaussian, 0.2 + 0.6 * U(rng), 0.08 + 0.1 * U(rng)});
        d.terms.push_back(t);
    }
    return d.sample(g);
}

struct Pair {
    Slice phi;
    BoundaryTrace f;
    ComplexField v;
};

Pair random_pair(const GridPtr& g, std::mt19937& rng) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const double lam = 4.0 + 4.0 * (U(rng) + 1.0);
    const double a = M_PI * U(rng);
    std::vector<double> K{lam * std::cos(a), lam * std::sin(a)};
    ComplexField P = discrete_plane_wave(g, K, -1);
    std::vector<double> Kv{3.0 * U(rng), 3.0 * U(rng)};
    ComplexField V = discrete_plane_wave(g, Kv, +1);
    // a free adjoint field that is not a pure plane wave
    const cplx amp(1.0, 0.3);
    ComplexField w = solve_adjoint(zero_potential(g), scaled(V.slice(0), amp), scaled(BoundaryTrace::of(V), amp));
    return {P.slice(0), BoundaryTrace::of(P), w};
}

}  // namespace

TEST_CASE("q identity vanishes for q = 0") {
    auto g = make_unit_grid(2, 25, 24);
    std::mt19937 rng(3);
    auto p = random_pair(g, rng);
    DirectQSource src(zero_potential(g));
    auto m = src.measure(p.phi, p.f, "x");
    const cplx val = assemble_q_identity(m, p.phi, p.f, p.v);
    CHECK(std::abs(val) <= 1e-10);
}

TEST_CASE("boundary assembly matches the interior quadrature") {
    auto g = make_unit_grid(2, 33, 32);
    std::mt19937 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto q = random_potential(g, rng);
        auto p = random_pair(g, rng);
        ComplexField u1 = solve_linear(q, p.phi, p.f);
        const cplx interior = q_identity_interior(q, u1, p.v);
        DirectQSource src(q);
        const cplx boundary = assemble_q_identity(src.measure(p.phi, p.f, "x"), p.phi, p.f, p.v);
        CHECK(std::abs(boundary - interior) <= 1e-4 * std::abs(interior));
    }
}

TEST_CASE("q identity is linear in the data") {
    auto g = make_unit_grid(2, 17, 16);
    std::mt19937 rng(5);
    auto q = bump_potential(g, 2.0);
    auto p = random_pair(g, rng);
    DirectQSource src(q);
    const cplx a = assemble_q_identity(src.measure(p.phi, p.f, "x"), p.phi, p.f, p.v);
    auto phi2 = scaled(p.phi, 2.0);
    auto f2 = scaled(p.f, 2.0);
    const cplx b = assemble_q_identity(src.measure(phi2, f2, "x"), phi2, f2, p.v);
    CHECK(std::abs(b - 2.0 * a) <= 1e-12 * std::abs(a));
}

TEST_CASE("lattice transform and inversion round trip") {
    auto g = make_unit_grid(2, 16, 12);
    std::mt19937 rng(2);
    auto q = random_potential(g, rng);
    auto lat = lattice_of_field(q, false);
    // conjugate symmetry of a real field
    int multi[2];
    double asym = 0.0;
    for (std::size_t idx = 0; idx < lat.size(); ++idx) {
        const int jt = static_cast<int>(idx / g->nodes());
        g->unravel(idx % g->nodes(), multi);
        if (2 * jt == g->nt || 2 * multi[0] == g->m[0] || 2 * multi[1] == g->m[1]) continue;  // Nyquist bins
        int neg[2] = {(g->m[0] - multi[0]) % g->m[0], (g->m[1] - multi[1]) % g->m[1]};
        const std::size_t j2 = ((g->nt - jt) % g->nt) * g->nodes() + g->index(neg);
        asym = std::max(asym, std::abs(lat.values[j2] - std::conj(lat.values[idx])));
    }
    CHECK(asym <= 1e-12);

    auto inv = invert_q(lat);
    CHECK(inv.imag_ratio <= 1e-12);
    const auto halves = invert_lattice(lat);
    double err = 0.0;
    for (int k = 0; k < g->nt; ++k) {
        const auto h = q.half_level(k);
        for (std::size_t i = 0; i < g->nodes(); ++i) err = std::max(err, std::abs(halves[k * g->nodes() + i] - h[i]));
    }
    CHECK(err <= 1e-12);
}

TEST_CASE("zero and incomplete lattices") {
    auto g = make_unit_grid(2, 9, 8);
    FourierSampleSet s(g);
    CHECK_THROWS_AS(invert_q(s), ReconstructionError);
    auto r = invert_q(s, true);
    CHECK(r.q.max_abs() == 0.0);
    std::fill(s.populated.begin(), s.populated.end(), 1);
    CHECK(invert_q(s).q.max_abs() == 0.0);
}

TEST_CASE("analytic transform inverts to the benchmark") {
    auto g = make_unit_grid(2, 64, 128);
    auto exact = analytic_fourier(q_bench_descriptor(*g), g);
    auto inv = invert_q(exact);
    const double err = relative_l2(inv.q, q_bench(g));
    MESSAGE("analytic inversion error " << err << ", imag ratio " << inv.imag_ratio);
    CHECK(err <= 0.02);
    CHECK(inv.imag_ratio <= 0.01);

    // a pure time cosine has a two-point spectrum
    auto g2 = make_unit_grid(2, 8, 16);
    SeparableTerm t;
    t.time = {Factor1D::Kind::cosine, 2.0 * M_PI, 0.0};
    t.space = {{Factor1D::Kind::constant, 0, 0}, {Factor1D::Kind::constant, 0, 0}};
    auto cs = analytic_fourier(FieldDescriptor{{t}}, g2);
    double peak = 0.0, rest = 0.0;
    for (std::size_t idx = 0; idx < cs.size(); ++idx) {
        const bool spike = (idx % g2->nodes()) == 0 && std::abs(std::abs(cs.tau(idx)) - 2.0 * M_PI) < 1e-9;
        (spike ? peak : rest) = std::max(spike ? peak : rest, std::abs(cs.values[idx]));
    }
    CHECK(peak == doctest::Approx(0.5 * 8.0 / 7.0 * 8.0 / 7.0));
    CHECK(rest <= 1e-12);
}

TEST_CASE("matched sampling reconstructs the benchmark on a coarse grid") {
    auto g = make_unit_grid(2, 32, 64);
    auto q = q_bench(g);
    DirectQSource src(q);
    QSamplingOptions opt;
    opt.directions = 48;
    QSamplingReport rep;
    auto s = sample_q_matched(src, opt, &rep);
    auto truth = lattice_of_field(q);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) num += std::norm(s.values[i] - truth.values[i]), den += std::norm(truth.values[i]);
    auto inv = invert_q(s, true);
    const auto e = q_error(inv.q, q, inv.imag_ratio);
    MESSAGE("lattice err " << std::sqrt(num / den) << ", unreached " << rep.unreached << ", max eta " << rep.max_eta
                           << ", mean eta " << rep.mean_eta << ", l2 " << e.l2_rel << ", imag " << e.imag_ratio);
    CHECK(e.l2_rel <= 0.10);
    // the 1% bound is checked at the default resolution by the acceptance run
    CHECK(e.imag_ratio <= 0.02);
}

TEST_CASE("literal probe pair sees the temporal cosine") {
    auto g = make_unit_grid(2, 33, 64);
    SeparableTerm t;
    t.time = {Factor1D::Kind::cosine, 2.0 * M_PI, 0.0};
    t.space = {{Factor1D::Kind::constant, 0, 0}, {Factor1D::Kind::constant, 0, 0}};
    auto q = FieldDescriptor{{t}}.sample(g);
    DirectQSource src(q);
    const double lam = 8.0;
    const cplx peak = sample_q_literal(src, {lam}, 2.0 * M_PI, {0.0, 0.0});
    const cplx off = sample_q_literal(src, {lam}, 6.0 * M_PI, {0.0, 0.0});
    const cplx off2 = sample_q_literal(src, {lam}, 0.0, {2.0 * M_PI, 0.0});
    MESSAGE("peak " << std::abs(peak) << " off " << std::abs(off) << " " << std::abs(off2));
    CHECK(std::abs(peak) > 0.3);
    CHECK(std::abs(off) <= 0.05 * std::abs(peak));
    CHECK(std::abs(off2) <= 0.05 * std::abs(peak));
}

TEST_CASE("cached source stores and replays measurements") {
    auto g = make_unit_grid(2, 9, 8);
    auto q = bump_potential(g, 1.0);
    const std::string dir = "qcache_tmp";
    std::filesystem::remove_all(dir);
    auto inner = std::make_shared<DirectQSource>(q);
    CachedQSource cache(inner, g, dir);
    std::vector<double> K{2.0, 1.0};
    auto P = discrete_plane_wave(g, K, -1);
    auto a = cache.measure(P.slice(0), BoundaryTrace::of(P), "probe");
    CHECK(std::filesystem::exists(dir + "/probe.json"));
    CachedQSource replay(nullptr, g, dir);
    auto b = replay.measure(P.slice(0), BoundaryTrace::of(P), "probe");
    CHECK((a - b).norm() == 0.0);
    CHECK_THROWS_AS(replay.measure(P.slice(0), BoundaryTrace::of(P), "missing"), ReconstructionError);
    std::filesystem::remove_all(dir);
}
