#include "dsi/fft.hpp"

#include <fftw3.h>

#include <functional>
#include <numeric>

namespace dsi {

void dft_inplace(std::vector<cplx>& data, const std::vector<int>& dims, int sign) {
    const std::size_t total = std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    if (total != data.size()) throw std::invalid_argument("dft: size does not match dims");
    if (total == 0) return;
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lk(fftw_planner_mutex());
        plan = fftw_plan_dft(static_cast<int>(dims.size()), dims.data(), buf, buf,
                             sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> lk(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

}  // namespace dsi
