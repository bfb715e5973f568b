#pragma once

#include <cmath>

#include "dsi/oracles.hpp"
#include "dsi/solver.hpp"

namespace testsupport {

using namespace dsi;

inline constexpr cplx I1{0.0, 1.0};

inline double max_diff(const Slice& a, const Slice& b) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
    return e;
}

inline Potential bump_potential(const GridPtr& g, double amp) {
    Potential q(g);
    int multi[3];
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            g->unravel(i, multi);
            double r2 = 0.0;
            for (int a = 0; a < g->n; ++a) {
                const double d = g->coord(a, multi[a]) - 0.5;
                r2 += d * d;
            }
            q.at(k, i) = amp * std::exp(-r2 / 0.05) * (1.0 + 0.5 * std::sin(3.0 * g->time(static_cast<int>(k))));
        }
    return q;
}

inline RealVectorField smooth_b(const GridPtr& g, double amp = 1.0) {
    RealVectorField b(g);
    int multi[3];
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t i = 0; i < g->nodes(); ++i) {
            g->unravel(i, multi);
            const double x = g->coord(0, multi[0]), y = g->coord(1, multi[1]);
            b.comp[0].at(k, i) = amp * std::cos(x + 0.3 * y) * (1.0 + 0.2 * g->time(static_cast<int>(k)));
            b.comp[1].at(k, i) = amp * 0.5 * std::sin(2.0 * y - x);
        }
    return b;
}

/// sin^2(pi t) ramp on a smooth spatial profile, so the data are flat at t = 0.
inline ManufacturedProblem flat_data(const GridPtr& g, double k1 = 1.0, double k2 = 0.5) {
    auto u = [k1, k2](double t, const double* x) {
        const double s = std::sin(M_PI * t);
        return s * s * std::exp(I1 * (k1 * x[0] + k2 * x[1]));
    };
    auto zero = [](double, const double*) { return cplx{}; };
    return manufactured_problem(g, u, zero, zero, zero_potential(g));
}

inline BoundaryTrace scaled(const BoundaryTrace& f, cplx s) {
    BoundaryTrace out = f;
    for (auto& lv : out.lateral)
        for (auto& z : lv) z *= s;
    for (auto& z : out.final_slice) z *= s;
    return out;
}

inline Slice scaled(const Slice& f, cplx s) {
    Slice out = f;
    for (auto& z : out) z *= s;
    return out;
}

}  // namespace testsupport
