#pragma once

#include <mutex>
#include <vector>

#include "dsi/grid.hpp"

namespace dsi {

/// FFTW plan creation and destruction are not thread safe; every planner call takes this lock.
std::mutex& fftw_planner_mutex();

/// In-place unnormalised multi-dimensional DFT, row-major `dims`.
/// sign = -1: sum x e^{-2 pi i jk/N}; sign = +1: sum x e^{+2 pi i jk/N}.
void dft_inplace(std::vector<cplx>& data, const std::vector<int>& dims, int sign);

}  // namespace dsi
