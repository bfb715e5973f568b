#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>

#include "dsi/probes.hpp"
#include "support.hpp"

using namespace dsi;
using namespace testsupport;

TEST_CASE("discrete plane waves solve the free schemes exactly") {
    auto g = make_unit_grid(2, 17, 16);
    auto q0 = zero_potential(g);
    std::vector<double> K{5.0, -3.0};
    auto fw = discrete_plane_wave(g, K, -1);
    auto bw = discrete_plane_wave(g, K, +1);
    CHECK(cn_residual(q0, fw, nullptr, +1) <= 1e-10);
    CHECK(cn_residual(q0, bw, nullptr, -1) <= 1e-10);
    // the adjoint wave is the conjugate of the forward one
    CHECK((bw - conj(fw)).max_abs() <= 1e-14);
    // small K: theta -> |K|^2 dt
    std::vector<double> k1{0.1, 0.2};
    CHECK(disc_theta(*g, k1.data()) == doctest::Approx(0.05 * g->dt).epsilon(1e-3));
}

TEST_CASE("u1 probe with q = 0 has no remainder and reassembles") {
    auto g = make_unit_grid(2, 33, 32);
    ProbeSpec sp;
    sp.lambda = 12.0;
    sp.omega = {0.6, 0.8};
    auto p = build_u1_probe(zero_potential(g), sp);
    CHECK(p.remainder.max_abs() <= 1e-9);
    CHECK(p.bound() <= 1e-8);

    auto pq = build_u1_probe(bump_potential(g, 3.0), sp);
    std::vector<double> K{12.0 * 0.6, 12.0 * 0.8};
    auto P = discrete_plane_wave(g, K, -1);
    double err = 0.0;
    for (std::size_t j = 0; j < P.data.size(); ++j)
        err = std::max(err, std::abs(P.data[j] * (1.0 + pq.remainder.data[j]) - pq.field.data[j]));
    CHECK(err <= 1e-12);
    CHECK(pq.remainder.max_abs() > 1e-4);
}

TEST_CASE("u1 remainder bound stays bounded along the ladder") {
    auto g = make_unit_grid(2, 33, 64);
    auto q = bump_potential(g, 2.0);
    auto lams = lambda_ladder(*g);
    std::vector<double> bounds, rel;
    for (double lam : lams) {
        ProbeSpec sp;
        sp.lambda = lam;
        sp.omega = {1.0, 0.0};
        auto p = build_u1_probe(q, sp);
        bounds.push_back(p.bound());
        rel.push_back(p.remainder.l2_norm());
        MESSAGE("lambda " << lam << " bound " << p.bound() << " |R1| " << p.remainder.l2_norm());
    }
    // R1 = O(1/lambda): the relative size drops and the weighted bound does not blow up
    CHECK(rel.back() < rel.front());
    CHECK(bounds.back() <= 2.0 * bounds.front());
}

TEST_CASE("free v probe on the dispersion relation has a small remainder") {
    auto g = make_unit_grid(2, 33, 64);
    ProbeSpec sp;
    sp.lambda = 6.0;
    sp.omega = {1.0, 0.0};
    sp.xi = {0.0, 2.0};
    // discrete dispersion relation: the data are an exact discrete wave
    std::vector<double> K{6.0, 2.0}, K0{6.0, 0.0};
    sp.tau = (disc_theta(*g, K.data()) - disc_theta(*g, K0.data())) / g->dt;
    auto exact = build_v_probe_free(g, sp);
    CHECK(exact.remainder.max_abs() <= 1e-9);

    sp.tau = 4.0;  // |xi|^2, continuum relation; R2 is time dispersion only
    auto v = build_v_probe_free(g, sp);
    MESSAGE("continuum-matched |R2|_max " << v.remainder.max_abs());
    CHECK(v.remainder.max_abs() <= 0.15);

    sp.tau = 40.0;
    auto off = build_v_probe_free(g, sp);
    MESSAGE("off-shell |R2|_max " << off.remainder.max_abs());
    CHECK(off.remainder.max_abs() > 0.5);

    sp.xi = {1.0, 1.0};
    CHECK_THROWS_AS(build_v_probe_free(g, sp), ProbeError);
}

TEST_CASE("resolution cap is enforced") {
    auto g = make_unit_grid(2, 17, 8);
    ProbeSpec sp;
    sp.omega = {1.0, 0.0};
    sp.lambda = 0.5 * 16 + 0.1;
    CHECK_THROWS_AS(build_u1_probe(zero_potential(g), sp), ProbeError);
    sp.lambda = -1.0;
    CHECK_THROWS_AS(build_u1_probe(zero_potential(g), sp), ProbeError);
}

TEST_CASE("v_j family determinant for q = 0 matches the stencil symbol") {
    auto g = make_unit_grid(2, 25, 16);
    const double lam = 7.0;
    auto fam = build_vj_family(zero_potential(g), lam, {{1.0, 0.0}, {0.0, 1.0}});
    const double h = g->h[0];
    const double expect = std::pow(std::sin(lam * h) / (lam * h), 2);
    double err = 0.0;
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t i : g->interior_nodes()) err = std::max(err, std::abs(fam.det_ratio.at(k, i) - expect));
    CHECK(err <= 1e-9);
    CHECK(fam.omega_det == doctest::Approx(1.0));
    for (const auto& m : fam.members) CHECK(m.remainder.max_abs() <= 1e-9);
    CHECK_THROWS_AS(build_vj_family(zero_potential(g), lam, {{1.0, 0.0}, {2.0, 0.0}}), ProbeError);
    CHECK_THROWS_AS(build_vj_family(zero_potential(g), lam, {{1.0, 0.0}}), ProbeError);
}

TEST_CASE("v_j family with a potential keeps the determinant away from zero") {
    auto g = make_unit_grid(2, 33, 32);
    auto q = bump_potential(g, 3.0);
    auto fam = build_vj_family(q, 8.0, {{1.0, 0.0}, {0.0, 1.0}}, 1);
    MESSAGE("min det ratio " << fam.min_det_ratio << ", |R| " << fam.members[0].remainder.max_abs());
    CHECK(fam.min_det_ratio > 0.1);
    CHECK(fam.amplitudes[0].size() == 2);
    // reassembly v = ansatz + R
    CHECK(fam.members[0].field.all_finite());
}

TEST_CASE("transport of a constant along e1 gives -x1") {
    auto g = make_unit_grid(2, 17, 4);
    ComplexField one(g);
    std::fill(one.data.begin(), one.data.end(), cplx{1.0, 0.0});
    auto A = solve_transport({1.0, 0.0}, one);
    int multi[2];
    double err = 0.0;
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        g->unravel(i, multi);
        err = std::max(err, std::abs(A.at(2, i) + g->coord(0, multi[0])));
    }
    CHECK(err <= 1e-12);

    // diagonal direction: -(distance back to the inflow faces)
    auto D = solve_transport({1.0, 1.0}, one);
    err = 0.0;
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        g->unravel(i, multi);
        const double s = std::sqrt(2.0) * std::min(g->coord(0, multi[0]), g->coord(1, multi[1]));
        err = std::max(err, std::abs(D.at(0, i) + s));
    }
    CHECK(err <= 1e-12);
}

TEST_CASE("transport integrates a derivative along the ray") {
    auto g = make_unit_grid(2, 65, 2);
    auto G = [](double x) { return std::sin(3.0 * x) + x * x; };
    auto dG = [](double x) { return 3.0 * std::cos(3.0 * x) + 2.0 * x; };
    ComplexField rhs(g);
    int multi[2];
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            g->unravel(i, multi);
            rhs.at(k, i) = dG(g->coord(0, multi[0])) * (1.0 + k);
        }
    auto A = solve_transport({1.0, 0.0}, rhs);
    double err = 0.0;
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            g->unravel(i, multi);
            const double x = g->coord(0, multi[0]);
            err = std::max(err, std::abs(A.at(k, i) + (1.0 + k) * (G(x) - G(0.0))));
        }
    CHECK(err <= 1e-3);

    // padding extends the integration outside the box
    ComplexField one(g);
    std::fill(one.data.begin(), one.data.end(), cplx{1.0, 0.0});
    auto P = solve_transport({1.0, 0.0}, one, 0.2);
    CHECK(std::abs(P.at(0, 0)) == doctest::Approx(0.1).epsilon(0.05));
    CHECK_THROWS_AS(solve_transport({0.0, 0.0}, one), ProbeError);
}

TEST_CASE("ladder stays inside the resolution cap and near its targets") {
    auto g = make_unit_grid(2, 64, 128);
    auto lams = lambda_ladder(*g);
    REQUIRE(lams.size() == 3);
    const double lcap = 0.5 / g->h[0];
    const double f[3] = {0.25, 0.5, 1.0};
    for (int i = 0; i < 3; ++i) {
        CHECK(lams[i] <= f[i] * lcap + 1e-12);
        CHECK(lams[i] >= 0.9 * f[i] * lcap - 1e-12);
    }
    CHECK(lams[0] < lams[1]);
    CHECK(lams[1] < lams[2]);
}

TEST_CASE("perpendicular directions") {
    for (auto xi : std::vector<std::vector<double>>{{1.0, 2.0}, {0.0, 0.0}, {3.0, -1.0, 0.5}, {0.0, 0.0, 2.0}}) {
        auto w = perpendicular_direction(xi);
        double dot = 0.0, nn = 0.0;
        for (std::size_t a = 0; a < w.size(); ++a) dot += w[a] * xi[a], nn += w[a] * w[a];
        CHECK(std::abs(dot) <= 1e-12);
        CHECK(nn == doctest::Approx(1.0));
    }
}

TEST_CASE("probe cache round trip and key sensitivity") {
    auto g = make_unit_grid(2, 9, 4);
    auto q = bump_potential(g, 1.0);
    ProbeSpec sp;
    sp.lambda = 3.0;
    sp.omega = {1.0, 0.0};
    const std::string k1 = ProbeCache::key(sp, *g, &q);
    auto sp2 = sp;
    sp2.lambda = 3.0000001;
    CHECK(ProbeCache::key(sp2, *g, &q) != k1);
    auto q2 = q;
    q2.data[5] += 1e-9;
    CHECK(ProbeCache::key(sp, *g, &q2) != k1);
    CHECK(ProbeCache::key(sp, *g, &q) == k1);

    const std::string dir = "probe_cache_tmp";
    std::filesystem::remove_all(dir);
    ProbeCache cache(dir);
    CHECK_FALSE(cache.load(k1, g).has_value());
    auto p = build_u1_probe(q, sp);
    cache.store(k1, p.field);
    auto back = cache.load(k1, g);
    REQUIRE(back.has_value());
    CHECK((*back - p.field).max_abs() == 0.0);
    std::filesystem::remove_all(dir);

    setenv("DSI_PROBE_CACHE", "elsewhere", 1);
    CHECK(ProbeCache::from_env("fallback").dir() == "elsewhere");
    unsetenv("DSI_PROBE_CACHE");
    CHECK(ProbeCache::from_env("fallback").dir() == "fallback");
}
