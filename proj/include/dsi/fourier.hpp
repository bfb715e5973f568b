#pragma once

#include <vector>

#include "dsi/grid.hpp"

namespace dsi {

/// Signed frequency index of DFT bin j out of N (numpy fftfreq ordering).
inline int signed_bin(int j, int N) { return j < (N + 1) / 2 ? j : j - N; }
/// Dual time frequency 2 pi j' / T.
double lattice_tau(const SpaceTimeGrid& g, int jt);
/// Dual space frequency 2 pi j' / (m_a h_a) along `axis`.
double lattice_xi(const SpaceTimeGrid& g, int axis, int j);

/// Samples on the DFT dual lattice of the grid: nt time bins times one bin per node.
/// Entry jt * nodes + idx holds the bin whose spatial indices are the multi-index of node idx.
/// The convention is S(tau, xi) = dt h^n sum_k sum_x f^{k+1/2}(x) e^{i(tau t_{k+1/2} + xi.x)}.
struct FourierSampleSet {
    GridPtr grid;
    std::vector<cplx> values;
    std::vector<unsigned char> populated;
    /// Probe frequency used per sample (0 if none).
    std::vector<double> lambda_used;
    /// Length of the wavevector correction applied per sample.
    std::vector<double> eta;

    explicit FourierSampleSet(GridPtr g = nullptr);
    std::size_t size() const { return values.size(); }
    double tau(std::size_t idx) const;
    double xi(std::size_t idx, int axis) const;
    std::size_t count_populated() const;
};

/// Discrete transform of half-level averages of f in the lattice convention.
/// interior_only drops boundary nodes, matching what the interior identities see.
FourierSampleSet lattice_of_field(const RealField& f, bool interior_only = true);
FourierSampleSet lattice_of_halves(const GridPtr& g, const std::vector<cplx>& halves);

/// Inverse of the lattice convention: half-level values (nt slices of nodes) from samples.
std::vector<cplx> invert_lattice(const FourierSampleSet& s);

/// Half levels to full levels: ends copy the nearest half level, inside the mean of the two.
RealField full_levels_from_halves(const GridPtr& g, const std::vector<double>& halves);

}  // namespace dsi
