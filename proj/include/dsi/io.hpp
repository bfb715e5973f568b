#pragma once

#include <string>

#include "dsi/grid.hpp"

namespace dsi {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FieldKind { complex, real };

struct LoadedField {
    ComplexField field;
    FieldKind kind = FieldKind::complex;
};

/// SRF1: one JSON header line, then little-endian f64 (re, im) pairs, time-major.
void write_srf1(const std::string& path, const ComplexField& f);
void write_srf1(const std::string& path, const RealField& f);
LoadedField read_srf1(const std::string& path);
/// Reads a real-kind file (or a complex one with negligible imaginary part) as a RealField.
RealField read_srf1_real(const std::string& path, const GridPtr& expect = nullptr);

/// Rows of t, x_1..x_n, re, im. `stride_t` and `stride_x` thin the output.
void write_csv(const std::string& path, const ComplexField& f, int stride_t = 1, int stride_x = 1);
void write_csv(const std::string& path, const RealField& f, int stride_t = 1, int stride_x = 1);

}  // namespace dsi
