#include "dsi/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace dsi {

namespace {

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap64(bits);
    }
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
}

double get_f64(const char* p) {
    std::uint64_t bits;
    std::memcpy(&bits, p, 8);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap64(bits);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string header_line(const SpaceTimeGrid& g, const char* kind) {
    nlohmann::ordered_json h;
    h["magic"] = "SRF1";
    h["n"] = g.n;
    h["m"] = g.m;
    h["nt"] = g.nt;
    h["box"] = g.box;
    h["T"] = g.T;
    h["kind"] = kind;
    return h.dump();
}

template <class Get>
void write_body(const std::string& path, const SpaceTimeGrid& g, const char* kind, Get get) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << header_line(g, kind) << '\n';
    const std::size_t total = g.levels() * g.nodes();
    for (std::size_t i = 0; i < total; ++i) {
        const cplx z = get(i);
        put_f64(os, z.real());
        put_f64(os, z.imag());
    }
    if (!os) throw IoError("write failed for " + path);
}

}  // namespace

void write_srf1(const std::string& path, const ComplexField& f) {
    write_body(path, *f.grid, "complex", [&](std::size_t i) { return f.data[i]; });
}

void write_srf1(const std::string& path, const RealField& f) {
    write_body(path, *f.grid, "real", [&](std::size_t i) { return cplx(f.data[i], 0.0); });
}

LoadedField read_srf1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError(path + ": missing header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        throw IoError(path + ": bad header: " + e.what());
    }
    if (h.value("magic", "") != "SRF1") throw IoError(path + ": not an SRF1 file");
    auto m = h.at("m").get<std::vector<int>>();
    auto box = h.at("box").get<std::vector<double>>();
    if (h.at("n").get<int>() != static_cast<int>(m.size())) throw IoError(path + ": n does not match m");
    GridPtr g = make_grid(m, h.at("nt").get<int>(), box, h.at("T").get<double>());
    LoadedField out;
    out.kind = h.value("kind", "complex") == "real" ? FieldKind::real : FieldKind::complex;
    out.field = ComplexField(g);
    const std::size_t total = g->levels() * g->nodes();
    std::vector<char> buf(total * 16);
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw IoError(path + ": truncated body");
    for (std::size_t i = 0; i < total; ++i)
        out.field.data[i] = cplx(get_f64(&buf[16 * i]), get_f64(&buf[16 * i + 8]));
    if (!out.field.all_finite()) throw IoError(path + ": non-finite values");
    return out;
}

RealField read_srf1_real(const std::string& path, const GridPtr& expect) {
    LoadedField lf = read_srf1(path);
    GridPtr g = lf.field.grid;
    if (expect) {
        if (!expect->same_shape(*g)) throw IoError(path + ": grid differs from the configured grid");
        g = expect;
    }
    RealField r(g);
    double im = 0.0, re = 0.0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        r.data[i] = lf.field.data[i].real();
        im = std::max(im, std::abs(lf.field.data[i].imag()));
        re = std::max(re, std::abs(lf.field.data[i].real()));
    }
    if (im > 1e-12 * std::max(1.0, re)) throw IoError(path + ": field is not real-valued");
    return r;
}

namespace {

template <class Get>
void csv_body(const std::string& path, const SpaceTimeGrid& g, int st, int sx, Get get) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    st = std::max(1, st);
    sx = std::max(1, sx);
    os << "t";
    for (int a = 0; a < g.n; ++a) os << ",x" << (a + 1);
    os << ",re,im\n";
    os.precision(17);
    int multi[3];
    for (std::size_t k = 0; k < g.levels(); k += static_cast<std::size_t>(st)) {
        for (std::size_t idx = 0; idx < g.nodes(); ++idx) {
            g.unravel(idx, multi);
            bool keep = true;
            for (int a = 0; a < g.n; ++a) keep = keep && (multi[a] % sx == 0);
            if (!keep) continue;
            const cplx z = get(k, idx);
            os << g.time(static_cast<int>(k));
            for (int a = 0; a < g.n; ++a) os << ',' << g.coord(a, multi[a]);
            os << ',' << z.real() << ',' << z.imag() << '\n';
        }
    }
}

}  // namespace

void write_csv(const std::string& path, const ComplexField& f, int st, int sx) {
    csv_body(path, *f.grid, st, sx, [&](std::size_t k, std::size_t i) { return f.at(k, i); });
}

void write_csv(const std::string& path, const RealField& f, int st, int sx) {
    csv_body(path, *f.grid, st, sx, [&](std::size_t k, std::size_t i) { return cplx(f.at(k, i), 0.0); });
}

}  // namespace dsi
