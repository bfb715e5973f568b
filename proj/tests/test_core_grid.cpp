#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "dsi/io.hpp"
#include "dsi/oracles.hpp"

using namespace dsi;

namespace {

Slice slice_of(const GridPtr& g, const std::function<cplx(const double*)>& fn) {
    Slice s(g->nodes());
    int multi[3];
    double x[3];
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        g->unravel(i, multi);
        for (int a = 0; a < g->n; ++a) x[a] = g->coord(a, multi[a]);
        s[i] = fn(x);
    }
    return s;
}

double max_err(const Slice& a, const Slice& b) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
    return e;
}

}  // namespace

TEST_CASE("grid spacing and validation") {
    auto g = make_grid({9, 17}, 8, {2.0, 1.0}, 0.5);
    CHECK(g->h[0] == 2.0 / 8);
    CHECK(g->h[1] == 1.0 / 16);
    CHECK(g->dt == 0.5 / 8);
    CHECK(g->nodes() == 9u * 17u);
    CHECK(g->levels() == 9u);
    CHECK_THROWS_AS(make_grid({4, 9}, 8), GridError);
    CHECK_THROWS_AS(make_grid({9, 9}, 1), GridError);
    CHECK_THROWS_AS(make_grid({9}, 4), GridError);
}

TEST_CASE("boundary set is exactly the face nodes") {
    auto g = make_unit_grid(3, 6, 2);
    int multi[3];
    std::size_t count = 0;
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        g->unravel(i, multi);
        bool face = false;
        for (int a = 0; a < 3; ++a) face = face || multi[a] == 0 || multi[a] == 5;
        CHECK(g->is_boundary(i) == face);
        if (face) {
            CHECK(g->boundary_slot(i) == static_cast<long>(count));
            ++count;
        }
    }
    CHECK(count == g->boundary_nodes().size());
    CHECK(count + g->interior_nodes().size() == g->nodes());
}

TEST_CASE("gradient: constants, affine, plane wave order") {
    auto g = make_unit_grid(2, 11, 2);
    auto c = slice_of(g, [](const double*) { return cplx(3.0, -1.0); });
    for (auto& comp : gradient(g, c.data())) CHECK(max_err(comp, Slice(g->nodes())) < 1e-12);

    auto lin = slice_of(g, [](const double* x) { return cplx(x[0], 0.0); });
    auto gl = gradient(g, lin.data());
    CHECK(max_err(gl[0], Slice(g->nodes(), 1.0)) < 1e-12);
    CHECK(max_err(gl[1], Slice(g->nodes())) < 1e-12);

    const double lam = 5.0, w0 = 0.6, w1 = 0.8;
    double prev = 0.0;
    for (int m : {21, 41, 81}) {
        auto gg = make_unit_grid(2, m, 2);
        auto pw = slice_of(gg, [&](const double* x) { return std::exp(cplx(0, lam * (w0 * x[0] + w1 * x[1]))); });
        auto gp = gradient(gg, pw.data());
        double e = 0.0;
        for (std::size_t i = 0; i < gg->nodes(); ++i) {
            e = std::max(e, std::abs(gp[0][i] - cplx(0, lam * w0) * pw[i]));
            e = std::max(e, std::abs(gp[1][i] - cplx(0, lam * w1) * pw[i]));
        }
        if (prev > 0.0) CHECK(prev / e == doctest::Approx(4.0).epsilon(0.15));
        prev = e;
    }
}

TEST_CASE("laplacian: affine, quadratic, eigenfunction order") {
    auto g = make_unit_grid(2, 9, 2);
    auto aff = slice_of(g, [](const double* x) { return cplx(2 * x[0] - x[1] + 1, x[1]); });
    CHECK(max_err(laplacian(g, aff.data()), Slice(g->nodes())) < 1e-11);
    auto quad = slice_of(g, [](const double* x) { return cplx(x[0] * x[0] + x[1] * x[1], 0.0); });
    auto lq = laplacian(g, quad.data());
    for (std::size_t i : g->interior_nodes()) CHECK(std::abs(lq[i] - 4.0) < 1e-10);
    for (std::size_t i : g->boundary_nodes()) CHECK(lq[i] == cplx{});

    double prev = 0.0;
    for (int m : {17, 33, 65}) {
        auto gg = make_unit_grid(2, m, 2);
        auto s = slice_of(gg, [](const double* x) { return cplx(std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]), 0); });
        auto ls = laplacian(gg, s.data());
        double e = 0.0;
        for (std::size_t i : gg->interior_nodes()) e = std::max(e, std::abs(ls[i] + 2 * M_PI * M_PI * s[i]));
        if (prev > 0.0) CHECK(prev / e == doctest::Approx(4.0).epsilon(0.1));
        prev = e;
    }
}

TEST_CASE("stencils are linear") {
    auto g = make_unit_grid(2, 13, 2);
    std::mt19937 rng(7);
    std::normal_distribution<double> nd;
    Slice f(g->nodes()), h(g->nodes()), comb(g->nodes());
    const cplx a(0.3, -1.7);
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        f[i] = {nd(rng), nd(rng)};
        h[i] = {nd(rng), nd(rng)};
        comb[i] = a * f[i] + h[i];
    }
    auto lf = laplacian(g, f.data()), lh = laplacian(g, h.data()), lc = laplacian(g, comb.data());
    auto gf = gradient(g, f.data()), gh = gradient(g, h.data()), gc = gradient(g, comb.data());
    double e = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < g->nodes(); ++i) {
        e = std::max(e, std::abs(lc[i] - a * lf[i] - lh[i]));
        scale = std::max(scale, std::abs(lc[i]));
        for (int c = 0; c < 2; ++c) e = std::max(e, std::abs(gc[c][i] - a * gf[c][i] - gh[c][i]));
    }
    CHECK(e <= 1e-13 * scale);
}

TEST_CASE("discrete Green identity for fields vanishing on the boundary") {
    for (int n : {2, 3}) {
        auto g = make_unit_grid(n, n == 2 ? 17 : 9, 2);
        std::mt19937 rng(11 + n);
        std::normal_distribution<double> nd;
        Slice u(g->nodes()), v(g->nodes());
        for (std::size_t i : g->interior_nodes()) {
            u[i] = {nd(rng), nd(rng)};
            v[i] = {nd(rng), nd(rng)};
        }
        auto lu = laplacian(g, u.data()), lv = laplacian(g, v.data());
        cplx s = 0.0;
        double nu = 0.0, nv = 0.0;
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            s += lu[i] * v[i] - u[i] * lv[i];
            nu += std::norm(u[i]);
            nv += std::norm(v[i]);
        }
        const double h2 = g->h[0] * g->h[0];
        CHECK(std::abs(s) * h2 <= 1e-10 * std::sqrt(nu * nv));
    }
}

TEST_CASE("space-time trapezoid") {
    auto g = make_unit_grid(2, 9, 8);
    auto one = sample_field(g, [](double, const double*) { return cplx(1.0); });
    CHECK(std::abs(quadrature_spacetime(one) - 1.0) < 1e-13);
    auto tx = sample_field(g, [](double t, const double* x) { return cplx(t * x[0]); });
    CHECK(std::abs(quadrature_spacetime(tx) - 0.25) < 1e-13);
    auto osc = sample_field(g, [](double, const double* x) { return std::exp(cplx(0, 2 * M_PI * x[0])); });
    CHECK(std::abs(quadrature_spacetime(osc)) < 1e-12);
}

TEST_CASE("space-time trapezoid converges at second order") {
    // int_0^1 int sin(t) e^{x1} x2 = (1 - cos 1)(e - 1)/2
    const double exact = (1.0 - std::cos(1.0)) * (std::exp(1.0) - 1.0) * 0.5;
    double prev = 0.0;
    for (int m : {9, 17, 33}) {
        auto g = make_unit_grid(2, m, 2 * (m - 1));
        auto f = sample_field(g, [](double t, const double* x) { return cplx(std::sin(t) * std::exp(x[0]) * x[1]); });
        const double e = std::abs(quadrature_spacetime(f) - exact);
        if (prev > 0.0) CHECK(prev / e == doctest::Approx(4.0).epsilon(0.1));
        prev = e;
    }
}

TEST_CASE("lateral trapezoid") {
    auto g = make_unit_grid(2, 9, 8);
    BoundaryTrace one(g);
    for (auto& lv : one.lateral) std::fill(lv.begin(), lv.end(), cplx(1.0));
    CHECK(std::abs(quadrature_lateral(one) - 4.0) < 1e-13);

    BoundaryTrace face(g);
    int multi[2];
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t s = 0; s < g->boundary_nodes().size(); ++s) {
            g->unravel(g->boundary_nodes()[s], multi);
            face.lateral[k][s] = multi[0] == 0 ? cplx(g->time(static_cast<int>(k))) : cplx{};
        }
    // the two corners of the face also sit on the faces x2 = 0 and x2 = 1
    CHECK(std::abs(quadrature_lateral(face) - (0.5 + g->h[1] / 2)) < 1e-13);

    // cos(t) e^{i pi x2} on the face x1 = 0
    auto g2 = make_unit_grid(2, 65, 64);
    BoundaryTrace osc(g2);
    for (std::size_t k = 0; k < g2->levels(); ++k)
        for (std::size_t s = 0; s < g2->boundary_nodes().size(); ++s) {
            g2->unravel(g2->boundary_nodes()[s], multi);
            if (multi[0] == 0)
                osc.lateral[k][s] =
                    std::cos(g2->time(static_cast<int>(k))) * std::exp(cplx(0, M_PI * g2->coord(1, multi[1])));
        }
    const cplx exact = std::sin(1.0) * cplx(0, 2.0 / M_PI);
    CHECK(std::abs(quadrature_lateral(osc) - exact) < 1e-3);
}

TEST_CASE("SRF1 round trip and CSV") {
    auto g = make_grid({5, 6}, 3, {1.0, 2.0}, 0.7);
    ComplexField f(g);
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = {std::sin(1.0 * i), std::cos(3.0 * i)};
    const std::string path = "test_core_grid_tmp.srf";
    write_srf1(path, f);
    auto back = read_srf1(path);
    CHECK(back.kind == FieldKind::complex);
    CHECK(back.field.grid->same_shape(*g));
    CHECK(back.field.data == f.data);

    RealField r(g);
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = 0.5 * i;
    write_srf1(path, r);
    auto rb = read_srf1_real(path, g);
    CHECK(rb.data == r.data);
    CHECK_THROWS_AS(read_srf1_real(path, make_unit_grid(2, 5, 3)), IoError);
    write_srf1(path, f);
    CHECK_THROWS_AS(read_srf1_real(path), IoError);

    {
        std::ofstream os(path, std::ios::binary);
        os << "{\"magic\":\"SRF1\",\"n\":2,\"m\":[5,5],\"nt\":2,\"box\":[1,1],\"T\":1,\"kind\":\"complex\"}\n";
        os << "short";
    }
    CHECK_THROWS_AS(read_srf1(path), IoError);
    std::remove(path.c_str());

    const std::string csv = "test_core_grid_tmp.csv";
    write_csv(csv, f, 1, 1);
    std::ifstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,x1,x2,re,im");
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    CHECK(rows == f.data.size());
    std::remove(csv.c_str());
}

TEST_CASE("gradient transpose is the adjoint of the gradient") {
    for (int n : {2, 3}) {
        auto g = n == 2 ? std::make_shared<const SpaceTimeGrid>(std::vector<int>{7, 9}, 2, std::vector<double>{1.0, 1.5}, 1.0)
                        : std::make_shared<const SpaceTimeGrid>(std::vector<int>{5, 6, 7}, 2, std::vector<double>{1.0, 1.0, 2.0}, 1.0);
        std::mt19937 rng(n);
        std::normal_distribution<double> nd;
        Slice u(g->nodes());
        VectorSlice c(n, Slice(g->nodes()));
        for (auto& z : u) z = {nd(rng), nd(rng)};
        for (auto& s : c)
            for (auto& z : s) z = {nd(rng), nd(rng)};
        auto gu = gradient(g, u.data());
        auto gt = gradient_transpose(g, c);
        cplx lhs = 0.0, rhs = 0.0;
        for (int a = 0; a < n; ++a)
            for (std::size_t i = 0; i < g->nodes(); ++i) lhs += c[a][i] * gu[a][i];
        for (std::size_t i = 0; i < g->nodes(); ++i) rhs += gt[i] * u[i];
        CHECK(std::abs(lhs - rhs) <= 1e-12 * std::abs(lhs));
    }
}
