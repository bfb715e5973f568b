#include "dsi/fourier.hpp"

#include <algorithm>
#include <cmath>

#include "dsi/fft.hpp"

namespace dsi {

namespace {

std::vector<int> lattice_dims(const SpaceTimeGrid& g) {
    std::vector<int> d{g.nt};
    for (int a = 0; a < g.n; ++a) d.push_back(g.m[a]);
    return d;
}

}  // namespace

double lattice_tau(const SpaceTimeGrid& g, int jt) { return 2.0 * M_PI * signed_bin(jt, g.nt) / g.T; }

double lattice_xi(const SpaceTimeGrid& g, int axis, int j) {
    return 2.0 * M_PI * signed_bin(j, g.m[axis]) / (g.m[axis] * g.h[axis]);
}

FourierSampleSet::FourierSampleSet(GridPtr g) : grid(std::move(g)) {
    if (!grid) return;
    const std::size_t n = static_cast<std::size_t>(grid->nt) * grid->nodes();
    values.assign(n, cplx{});
    populated.assign(n, 0);
    lambda_used.assign(n, 0.0);
    eta.assign(n, 0.0);
}

double FourierSampleSet::tau(std::size_t idx) const { return lattice_tau(*grid, static_cast<int>(idx / grid->nodes())); }

double FourierSampleSet::xi(std::size_t idx, int axis) const {
    int multi[3];
    grid->unravel(idx % grid->nodes(), multi);
    return lattice_xi(*grid, axis, multi[axis]);
}

std::size_t FourierSampleSet::count_populated() const {
    return static_cast<std::size_t>(std::count(populated.begin(), populated.end(), 1));
}

FourierSampleSet lattice_of_halves(const GridPtr& gp, const std::vector<cplx>& halves) {
    const auto& g = *gp;
    FourierSampleSet s(gp);
    s.values = halves;
    dft_inplace(s.values, lattice_dims(g), +1);
    const double w = g.dt * g.cell_volume();
    for (std::size_t idx = 0; idx < s.size(); ++idx) {
        s.values[idx] *= w * std::polar(1.0, 0.5 * s.tau(idx) * g.dt);
        s.populated[idx] = 1;
    }
    return s;
}

FourierSampleSet lattice_of_field(const RealField& f, bool interior_only) {
    const auto& g = *f.grid;
    std::vector<cplx> halves(static_cast<std::size_t>(g.nt) * g.nodes());
    for (int k = 0; k < g.nt; ++k) {
        const auto h = f.half_level(k);
        for (std::size_t i = 0; i < g.nodes(); ++i)
            if (!interior_only || !g.is_boundary(i)) halves[k * g.nodes() + i] = h[i];
    }
    return lattice_of_halves(f.grid, halves);
}

std::vector<cplx> invert_lattice(const FourierSampleSet& s) {
    const auto& g = *s.grid;
    std::vector<cplx> out(s.values);
    for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] *= std::polar(1.0, -0.5 * s.tau(idx) * g.dt);
    dft_inplace(out, lattice_dims(g), -1);
    double norm = g.dt * g.cell_volume() * g.nt;
    for (int a = 0; a < g.n; ++a) norm *= g.m[a];
    for (auto& z : out) z /= norm;
    return out;
}

RealField full_levels_from_halves(const GridPtr& gp, const std::vector<double>& halves) {
    const auto& g = *gp;
    RealField f(gp);
    const std::size_t N = g.nodes();
    for (int k = 0; k <= g.nt; ++k)
        for (std::size_t i = 0; i < N; ++i) {
            double v;
            if (k == 0)
                v = halves[i];
            else if (k == g.nt)
                v = halves[(k - 1) * N + i];
            else
                v = 0.5 * (halves[(k - 1) * N + i] + halves[k * N + i]);
            f.at(k, i) = v;
        }
    return f;
}

}  // namespace dsi
