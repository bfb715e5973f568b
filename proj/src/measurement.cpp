#include "dsi/measurement.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dsi/io.hpp"
#include "json.hpp"

namespace dsi {

Measurement::Measurement(GridPtr g) : grid(std::move(g)) {
    if (grid) {
        final_state.assign(grid->nodes(), cplx{});
        flux = BoundaryTrace(grid);
    }
}

double Measurement::norm() const {
    const auto& g = *grid;
    double s = 0.0;
    for (std::size_t i : g.interior_nodes()) s += std::norm(final_state[i]);
    s *= g.cell_volume();
    BoundaryTrace sq(grid);
    for (std::size_t k = 0; k < flux.lateral.size(); ++k)
        for (std::size_t j = 0; j < flux.lateral[k].size(); ++j) sq.lateral[k][j] = std::norm(flux.lateral[k][j]);
    s += quadrature_lateral(sq).real();
    return std::sqrt(s);
}

Measurement& Measurement::operator+=(const Measurement& o) {
    require_same_grid(grid, o.grid, "measurement");
    for (std::size_t i = 0; i < final_state.size(); ++i) final_state[i] += o.final_state[i];
    for (std::size_t k = 0; k < flux.lateral.size(); ++k)
        for (std::size_t j = 0; j < flux.lateral[k].size(); ++j) flux.lateral[k][j] += o.flux.lateral[k][j];
    return *this;
}

Measurement& Measurement::operator*=(cplx s) {
    for (auto& z : final_state) z *= s;
    for (auto& lv : flux.lateral)
        for (auto& z : lv) z *= s;
    return *this;
}

Measurement operator+(Measurement a, const Measurement& b) { return a += b; }
Measurement operator-(Measurement a, const Measurement& b) {
    Measurement nb = b;
    nb *= -1.0;
    return a += nb;
}
Measurement operator*(cplx s, Measurement a) { return a *= s; }

Slice conormal_flux_level(const GridPtr& gp, const cplx* u, const VectorSlice* J) {
    const auto& g = *gp;
    const auto& bn = g.boundary_nodes();
    Slice out(bn.size());
    int multi[3];
    for (std::size_t s = 0; s < bn.size(); ++s) {
        const std::size_t idx = bn[s];
        if (g.face_count(idx) != 1) continue;
        g.unravel(idx, multi);
        int axis = 0, dir = 0;
        for (int a = 0; a < g.n; ++a) {
            if (multi[a] == 0) axis = a, dir = -1;
            if (multi[a] == g.m[a] - 1) axis = a, dir = +1;
        }
        const std::size_t in = dir > 0 ? idx - g.stride(axis) : idx + g.stride(axis);
        cplx v = (u[idx] - u[in]) / g.h[axis];
        if (J) v -= static_cast<double>(dir) * 0.5 * ((*J)[axis][idx] + (*J)[axis][in]);
        out[s] = v;
    }
    return out;
}

BoundaryTrace conormal_flux(const ComplexField& u, const NonlinearitySpec* nl) {
    BoundaryTrace tr(u.grid);
    for (std::size_t k = 0; k < u.grid->levels(); ++k) {
        if (nl) {
            VectorSlice J = nonlinear_flux(*nl, u.grid, u.level(k), k);
            tr.lateral[k] = conormal_flux_level(u.grid, u.level(k), &J);
        } else {
            tr.lateral[k] = conormal_flux_level(u.grid, u.level(k), nullptr);
        }
    }
    tr.final_slice = u.slice(u.grid->nt);
    return tr;
}

namespace {

Measurement measurement_of(const ComplexField& u, BoundaryTrace flux, double eps, const std::string& id) {
    Measurement m(u.grid);
    m.final_state = u.slice(u.grid->nt);
    m.flux = std::move(flux);
    m.eps = eps;
    m.input_id = id;
    return m;
}

void check_pair(const Measurement& a, const Measurement& b) {
    require_same_grid(a.grid, b.grid, "measurement pair");
    if (a.input_id != b.input_id) throw SolverError("measurements belong to different inputs");
}

}  // namespace

Measurement apply_io_map(const Potential& q, const NonlinearitySpec& nl, const Slice& phi, const BoundaryTrace& f,
                         double eps, const PicardOptions& opt, const std::string& input_id) {
    NonlinearResult r = solve_nonlinear(q, nl, phi, f, eps, opt);
    return measurement_of(r.u, conormal_flux(r.u, &nl), eps, input_id);
}

LinearizedPair extract_linearizations(const Measurement& m1, const Measurement& m2) {
    check_pair(m1, m2);
    const double e = m1.eps;
    if (!(e > 0.0) || std::abs(m2.eps - 2.0 * e) > 1e-12 * e)
        throw SolverError("extraction needs measurements at eps and 2 eps");
    LinearizedPair p{(1.0 / (2.0 * e)) * (4.0 * m1 - m2), (1.0 / (2.0 * e * e)) * (m2 - 2.0 * m1)};
    p.g1.eps = p.g2.eps = 0.0;
    return p;
}

LinearizedPair extract_linearizations3(const Measurement& m1, const Measurement& m2, const Measurement& m3) {
    check_pair(m1, m2);
    check_pair(m1, m3);
    const double e = m1.eps;
    if (!(e > 0.0) || std::abs(m2.eps - 2.0 * e) > 1e-12 * e || std::abs(m3.eps - 3.0 * e) > 1e-12 * e)
        throw SolverError("extraction needs measurements at eps, 2 eps and 3 eps");
    // L(s e)/s is quadratic in s: value and slope at s = 0 from s = 1, 2, 3
    LinearizedPair p{(1.0 / e) * (3.0 * m1 + (-1.5) * m2 + (1.0 / 3.0) * m3),
                     (1.0 / (e * e)) * ((-2.5) * m1 + 2.0 * m2 + (-0.5) * m3)};
    p.g1.eps = p.g2.eps = 0.0;
    return p;
}

Measurement lambda_q_of(const ComplexField& u1) { return measurement_of(u1, conormal_flux(u1, nullptr), 0.0, ""); }

Measurement lambda_q(const Potential& q, const Slice& phi, const BoundaryTrace& f, const SolverOptions& opt) {
    return lambda_q_of(solve_linear(q, phi, f, opt));
}

Measurement lambda_b_of(const RealVectorField& b, const ComplexField& u1, const ComplexField& u2) {
    NonlinearitySpec nl;
    nl.b = b;
    BoundaryTrace tr(u2.grid);
    for (std::size_t k = 0; k < u2.grid->levels(); ++k) {
        VectorSlice J = nonlinear_flux(nl, u1.grid, u1.level(k), k);
        tr.lateral[k] = conormal_flux_level(u2.grid, u2.level(k), &J);
    }
    return measurement_of(u2, std::move(tr), 0.0, "");
}

Measurement lambda_b(const Potential& q, const RealVectorField& b, const Slice& phi, const BoundaryTrace& f,
                     bool strict, const SolverOptions& opt) {
    ComplexField u1 = solve_linear(q, phi, f, opt);
    ComplexField u2 = compute_u2(q, b, u1, strict, opt);
    return lambda_b_of(b, u1, u2);
}

namespace {

std::vector<std::size_t> face_slots(const SpaceTimeGrid& g) {
    std::vector<std::size_t> out;
    const auto& bn = g.boundary_nodes();
    for (std::size_t s = 0; s < bn.size(); ++s)
        if (g.face_count(bn[s]) == 1) out.push_back(s);
    return out;
}

void put_f64(std::ostream& os, double v) {
    unsigned char b[8];
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("measurement payload truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace

void write_measurement(const std::string& stem, const Measurement& m) {
    const auto& g = *m.grid;
    const auto slots = face_slots(g);
    const std::string name = stem.substr(stem.find_last_of('/') + 1) + ".bin";
    {
        std::ofstream os(stem + ".bin", std::ios::binary);
        if (!os) throw IoError("cannot write " + stem + ".bin");
        for (std::size_t i : g.interior_nodes()) put_f64(os, m.final_state[i].real()), put_f64(os, m.final_state[i].imag());
        for (std::size_t k = 0; k < g.levels(); ++k)
            for (std::size_t s : slots) put_f64(os, m.flux.lateral[k][s].real()), put_f64(os, m.flux.lateral[k][s].imag());
        if (!os) throw IoError("write failed: " + stem + ".bin");
    }
    nlohmann::ordered_json meta;
    meta["format"] = "measurement-1";
    meta["grid"] = {{"m", g.m}, {"nt", g.nt}, {"box", g.box}, {"T", g.T}};
    meta["eps"] = m.eps;
    meta["input_id"] = m.input_id;
    meta["interior_values"] = g.interior_nodes().size();
    meta["face_values_per_level"] = slots.size();
    meta["payload"] = name;
    std::ofstream os(stem + ".json");
    if (!os) throw IoError("cannot write " + stem + ".json");
    os << meta.dump(2) << '\n';
}

Measurement read_measurement(const std::string& stem, const GridPtr& expect) {
    std::ifstream js(stem + ".json");
    if (!js) throw IoError("cannot open " + stem + ".json");
    auto meta = nlohmann::json::parse(js, nullptr, false);
    if (meta.is_discarded() || meta.value("format", "") != "measurement-1") throw IoError(stem + ".json: not a measurement");
    GridPtr g;
    try {
        const auto& gj = meta.at("grid");
        g = make_grid(gj.at("m").get<std::vector<int>>(), gj.at("nt").get<int>(), gj.at("box").get<std::vector<double>>(),
                      gj.at("T").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(stem + ".json: bad grid: " + e.what());
    }
    if (expect) {
        if (!expect->same_shape(*g)) throw IoError(stem + ": grid differs from the configured grid");
        g = expect;
    }
    const auto slots = face_slots(*g);
    if (meta.value("interior_values", std::size_t{0}) != g->interior_nodes().size() ||
        meta.value("face_values_per_level", std::size_t{0}) != slots.size())
        throw IoError(stem + ".json: payload counts do not match the grid");
    Measurement m(g);
    std::ifstream is(stem + ".bin", std::ios::binary);
    if (!is) throw IoError("cannot open " + stem + ".bin");
    for (std::size_t i : g->interior_nodes()) {
        const double re = get_f64(is);
        m.final_state[i] = {re, get_f64(is)};
    }
    for (std::size_t k = 0; k < g->levels(); ++k)
        for (std::size_t s : slots) {
            const double re = get_f64(is);
            m.flux.lateral[k][s] = {re, get_f64(is)};
        }
    m.eps = meta.value("eps", 1.0);
    m.input_id = meta.value("input_id", "");
    return m;
}

}  // namespace dsi
