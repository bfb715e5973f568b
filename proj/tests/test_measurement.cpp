#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <random>

#include "dsi/measurement.hpp"
#include "support.hpp"

using namespace dsi;
using namespace testsupport;

namespace {

Measurement random_measurement(const GridPtr& g, std::mt19937& rng, double eps) {
    std::normal_distribution<double> nd;
    Measurement m(g);
    for (std::size_t i : g->interior_nodes()) m.final_state[i] = {nd(rng), nd(rng)};
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t s = 0; s < g->boundary_nodes().size(); ++s)
            if (g->face_count(g->boundary_nodes()[s]) == 1) m.flux.lateral[k][s] = {nd(rng), nd(rng)};
    m.eps = eps;
    return m;
}

}  // namespace

TEST_CASE("zero input gives a zero measurement") {
    auto g = make_unit_grid(2, 13, 12);
    NonlinearitySpec nl;
    nl.b = smooth_b(g);
    auto m = apply_io_map(bump_potential(g, 2.0), nl, Slice(g->nodes()), BoundaryTrace(g), 0.1);
    CHECK(m.norm() == 0.0);
}

TEST_CASE("without nonlinearity the flux is eps D_nu u1") {
    auto g = make_unit_grid(2, 17, 16);
    auto q = bump_potential(g, 2.0);
    auto data = flat_data(g);
    NonlinearitySpec none;
    auto m = apply_io_map(q, none, data.phi, data.f, 0.3);
    auto lq = lambda_q(q, data.phi, data.f);
    CHECK((m - 0.3 * lq).norm() <= 1e-12 * m.norm());
}

TEST_CASE("flux follows eps g1 + eps^2 g2 up to O(eps^3)") {
    auto g = make_unit_grid(2, 17, 16);
    auto q = bump_potential(g, 2.0);
    auto b = smooth_b(g);
    auto data = flat_data(g);
    NonlinearitySpec nl;
    nl.b = b;
    auto lq = lambda_q(q, data.phi, data.f);
    auto lb = lambda_b(q, b, data.phi, data.f);
    CHECK(lb.norm() > 0.0);
    double prev = 0.0;
    for (double eps : {0.1, 0.05, 0.025}) {
        auto m = apply_io_map(q, nl, data.phi, data.f, eps);
        const double gap = (m - eps * lq - (eps * eps) * lb).norm();
        if (prev > 0.0) CHECK(prev / gap == doctest::Approx(8.0).epsilon(0.25));
        prev = gap;
    }
}

TEST_CASE("two-point extraction is exact on quadratic data") {
    auto g = make_unit_grid(2, 9, 8);
    std::mt19937 rng(1);
    auto A = random_measurement(g, rng, 0.0), B = random_measurement(g, rng, 0.0);
    const double e = 0.03;
    Measurement m1 = e * A + (e * e) * B, m2 = (2 * e) * A + (4 * e * e) * B;
    m1.eps = e;
    m2.eps = 2 * e;
    auto p = extract_linearizations(m1, m2);
    CHECK((p.g1 - A).norm() <= 1e-12 * A.norm());
    CHECK((p.g2 - B).norm() <= 1e-10 * B.norm());

    auto C = random_measurement(g, rng, 0.0);
    Measurement c1 = m1 + (e * e * e) * C, c2 = m2 + (8 * e * e * e) * C, c3 = (3 * e) * A + (9 * e * e) * B;
    c3 += (27 * e * e * e) * C;
    c1.eps = e;
    c2.eps = 2 * e;
    c3.eps = 3 * e;
    auto p3 = extract_linearizations3(c1, c2, c3);
    CHECK((p3.g1 - A).norm() <= 1e-11 * A.norm());
    CHECK((p3.g2 - B).norm() <= 1e-9 * B.norm());

    Measurement bad = m2;
    bad.input_id = "other";
    CHECK_THROWS_AS(extract_linearizations(m1, bad), SolverError);
    bad = m2;
    bad.eps = 3 * e;
    CHECK_THROWS_AS(extract_linearizations(m1, bad), SolverError);
}

TEST_CASE("lambda_b vanishes with b = 0") {
    auto g = make_unit_grid(2, 13, 12);
    auto data = flat_data(g);
    auto lb = lambda_b(bump_potential(g, 1.0), RealVectorField(g), data.phi, data.f);
    CHECK(lb.norm() == 0.0);
}

TEST_CASE("extraction converges to the direct linearizations") {
    auto g = make_unit_grid(2, 17, 16);
    auto q = bump_potential(g, 2.0);
    auto b = smooth_b(g);
    auto data = flat_data(g);
    NonlinearitySpec nl;
    nl.b = b;
    auto lq = lambda_q(q, data.phi, data.f);
    auto lb = lambda_b(q, b, data.phi, data.f);
    std::vector<double> g1gap, g2gap;
    for (double eps : {0.04, 0.02, 0.01}) {
        auto p = extract_linearizations(apply_io_map(q, nl, data.phi, data.f, eps),
                                        apply_io_map(q, nl, data.phi, data.f, 2 * eps));
        g1gap.push_back((p.g1 - lq).norm());
        g2gap.push_back((p.g2 - lb).norm());
    }
    for (std::size_t i = 1; i < g1gap.size(); ++i) {
        const double r1 = g1gap[i - 1] / g1gap[i], r2 = g2gap[i - 1] / g2gap[i];
        MESSAGE("g1 ratio " << r1 << ", g2 ratio " << r2);
        CHECK(r1 >= 3.0);
        CHECK(r1 <= 5.0);
        CHECK(r2 >= 1.5);
        CHECK(r2 <= 2.8);
    }

    // without a nonlinearity g2 is pure round-off
    NonlinearitySpec none;
    auto p0 = extract_linearizations(apply_io_map(q, none, data.phi, data.f, 0.01),
                                     apply_io_map(q, none, data.phi, data.f, 0.02));
    CHECK(p0.g2.norm() <= 1e-8 * lq.norm());
}

TEST_CASE("measurement files round trip") {
    auto g = make_unit_grid(2, 9, 6);
    std::mt19937 rng(4);
    auto m = random_measurement(g, rng, 0.125);
    m.input_id = "probe-7";
    write_measurement("test_meas_tmp", m);
    auto back = read_measurement("test_meas_tmp", g);
    CHECK((back - m).norm() == 0.0);
    CHECK(back.eps == 0.125);
    CHECK(back.input_id == "probe-7");
    std::remove("test_meas_tmp.bin");
    std::remove("test_meas_tmp.json");
}
