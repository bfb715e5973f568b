#include "dsi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "dsi/epsilon_lab.hpp"
#include "dsi/io.hpp"
#include "dsi/oracles.hpp"
#include "dsi/reconstruct_b.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace dsi {

ConfigError::ConfigError(const std::string& file, int ln, const std::string& msg)
    : std::runtime_error(file + (ln > 0 ? ":" + std::to_string(ln) : std::string()) + ": " + msg), line(ln) {}

StageError::StageError(std::string s, const std::string& msg)
    : std::runtime_error("stage " + s + " failed: " + msg), stage(std::move(s)) {}

// ---- config ---------------------------------------------------------------------------

namespace {

using Path = std::vector<std::string>;

struct Reader {
    const std::string& text;
    const std::string& name;

    int line_of(const Path& path) const {
        std::size_t pos = 0, found = std::string::npos;
        for (const auto& p : path) {
            const std::size_t at = text.find('"' + p + '"', pos);
            if (at == std::string::npos) break;
            found = at;
            pos = at + p.size() + 2;
        }
        if (found == std::string::npos) return 0;
        return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(found), '\n'));
    }

    static std::string dotted(const Path& p) {
        std::string s;
        for (const auto& x : p) s += (s.empty() ? "" : ".") + x;
        return s;
    }

    [[noreturn]] void fail(const Path& p, const std::string& msg) const {
        throw ConfigError(name, line_of(p), "'" + dotted(p) + "': " + msg);
    }

    double num(const json& v, const Path& p) const {
        if (!v.is_number()) fail(p, "expected a number");
        return v.get<double>();
    }
    double positive(const json& v, const Path& p) const {
        const double x = num(v, p);
        if (!(x > 0.0) || !std::isfinite(x)) fail(p, "must be positive");
        return x;
    }
    int integer(const json& v, const Path& p, int lo) const {
        if (!v.is_number_integer()) fail(p, "expected an integer");
        const long x = v.get<long>();
        if (x < lo || x > 1 << 20) fail(p, "must be an integer >= " + std::to_string(lo));
        return static_cast<int>(x);
    }
    bool boolean(const json& v, const Path& p) const {
        if (!v.is_boolean()) fail(p, "expected true or false");
        return v.get<bool>();
    }
    std::string str(const json& v, const Path& p) const {
        if (!v.is_string()) fail(p, "expected a string");
        return v.get<std::string>();
    }
    std::string choice(const json& v, const Path& p, std::initializer_list<const char*> opts) const {
        const std::string s = str(v, p);
        std::string all;
        for (const char* o : opts) {
            if (s == o) return s;
            all += (all.empty() ? "" : ", ") + std::string(o);
        }
        fail(p, "must be one of " + all);
    }
    std::vector<double> numbers(const json& v, const Path& p, bool pos) const {
        if (!v.is_array() || v.empty()) fail(p, "expected a non-empty list of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            Path q = p;
            q.push_back(std::to_string(i));
            out.push_back(pos ? positive(v[i], q) : num(v[i], q));
        }
        return out;
    }

    template <class Handlers>
    void table(const json& v, const Path& p, const Handlers& h) const {
        if (!v.is_object()) fail(p, "expected a table");
        for (auto it = v.begin(); it != v.end(); ++it) {
            Path q = p;
            q.push_back(it.key());
            auto f = h.find(it.key());
            if (f == h.end()) fail(q, "unknown key");
            f->second(it.value(), q);
        }
    }
};

using Handler = std::function<void(const json&, const Path&)>;
using Handlers = std::map<std::string, Handler>;

}  // namespace

Config parse_config(const std::string& text, const std::string& name) {
    json root;
    try {
        root = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte ? byte - 1 : 0), '\n'));
        std::string msg = e.what();
        const auto colon = msg.find("syntax error");
        throw ConfigError(name, line, colon == std::string::npos ? msg : msg.substr(colon));
    }
    Config c;
    c.text = text;
    Reader R{text, name};
    bool have_m = false, have_box = false;

    Handlers grid{
        {"n", [&](const json& v, const Path& p) { c.n = R.integer(v, p, 1); }},
        {"m", [&](const json& v, const Path& p) {
             have_m = true;
             if (v.is_array()) {
                 c.m.clear();
                 for (const auto& x : v) c.m.push_back(R.integer(x, p, 3));
             } else {
                 c.m = {R.integer(v, p, 3)};
             }
         }},
        {"nt", [&](const json& v, const Path& p) { c.nt = R.integer(v, p, 1); }},
        {"box", [&](const json& v, const Path& p) {
             have_box = true;
             c.box = v.is_array() ? R.numbers(v, p, true) : std::vector<double>{R.positive(v, p)};
         }},
        {"T", [&](const json& v, const Path& p) { c.T = R.positive(v, p); }},
    };
    Handlers remainder{
        {"kind", [&](const json& v, const Path& p) { c.remainder = R.choice(v, p, {"none", "cubic_flat"}); }},
        {"c", [&](const json& v, const Path& p) { c.remainder_c = R.num(v, p); }},
    };
    Handlers coeff{
        {"q", [&](const json& v, const Path& p) { c.q = R.str(v, p); }},
        {"q_amplitude", [&](const json& v, const Path& p) { c.q_amplitude = R.num(v, p); }},
        {"b", [&](const json& v, const Path& p) {
             c.b.clear();
             if (v.is_array()) {
                 for (const auto& x : v) c.b.push_back(R.str(x, p));
             } else {
                 c.b.push_back(R.str(v, p));
             }
             if (c.b.empty()) R.fail(p, "expected a name or a list of paths");
         }},
        {"b_amplitude", [&](const json& v, const Path& p) { c.b_amplitude = R.num(v, p); }},
        {"remainder", [&](const json& v, const Path& p) { R.table(v, p, remainder); }},
    };
    Handlers forward{
        {"data", [&](const json& v, const Path& p) { c.forward_data = R.choice(v, p, {"zero", "flat", "plane_wave"}); }},
        {"k", [&](const json& v, const Path& p) { c.forward_k = R.numbers(v, p, false); }},
        {"eps", [&](const json& v, const Path& p) { c.forward_eps = R.positive(v, p); }},
        {"nonlinear", [&](const json& v, const Path& p) { c.forward_nonlinear = R.boolean(v, p); }},
    };
    Handlers probes{
        {"lambda_fractions", [&](const json& v, const Path& p) { c.lambda_fractions = R.numbers(v, p, true); }},
        {"q_directions", [&](const json& v, const Path& p) { c.q_directions = R.integer(v, p, 1); }},
        {"q_eta_max", [&](const json& v, const Path& p) { c.q_eta_max = R.positive(v, p); }},
        {"b_directions", [&](const json& v, const Path& p) { c.b_directions = R.integer(v, p, 1); }},
        {"b_eta_max", [&](const json& v, const Path& p) { c.b_eta_max = R.positive(v, p); }},
        {"vj_fraction", [&](const json& v, const Path& p) { c.vj_fraction = R.positive(v, p); }},
        {"vj_order", [&](const json& v, const Path& p) { c.vj_order = R.integer(v, p, 0); }},
        {"vj_omegas", [&](const json& v, const Path& p) {
             if (!v.is_array() || v.empty()) R.fail(p, "expected a list of direction vectors");
             c.vj_omegas.clear();
             for (const auto& w : v) c.vj_omegas.push_back(R.numbers(w, p, false));
         }},
    };
    Handlers measurement{
        {"source", [&](const json& v, const Path& p) { c.data_source = R.choice(v, p, {"extracted", "direct"}); }},
        {"eps", [&](const json& v, const Path& p) { c.measure_eps = R.positive(v, p); }},
        {"three_point", [&](const json& v, const Path& p) { c.three_point = R.boolean(v, p); }},
    };
    Handlers epslab{
        {"eps", [&](const json& v, const Path& p) { c.eps_list = R.numbers(v, p, true); }},
    };
    Handlers tol{
        {"solver_tol", [&](const json& v, const Path& p) { c.solver_tol = R.positive(v, p); }},
        {"picard_tol", [&](const json& v, const Path& p) { c.picard_tol = R.positive(v, p); }},
        {"max_iter", [&](const json& v, const Path& p) { c.max_iter = R.integer(v, p, 1); }},
        {"det_factor", [&](const json& v, const Path& p) { c.det_factor = R.positive(v, p); }},
        {"max_flagged", [&](const json& v, const Path& p) {
             c.max_flagged = R.num(v, p);
             if (c.max_flagged < 0.0 || c.max_flagged > 1.0) R.fail(p, "must lie in [0, 1]");
         }},
    };
    Handlers verify{
        {"m", [&](const json& v, const Path& p) { c.verify_m = R.integer(v, p, 9); }},
        {"nt", [&](const json& v, const Path& p) { c.verify_nt = R.integer(v, p, 4); }},
    };
    Handlers top{
        {"grid", [&](const json& v, const Path& p) { R.table(v, p, grid); }},
        {"coefficients", [&](const json& v, const Path& p) { R.table(v, p, coeff); }},
        {"forward", [&](const json& v, const Path& p) { R.table(v, p, forward); }},
        {"probes", [&](const json& v, const Path& p) { R.table(v, p, probes); }},
        {"measurement", [&](const json& v, const Path& p) { R.table(v, p, measurement); }},
        {"eps_lab", [&](const json& v, const Path& p) { R.table(v, p, epslab); }},
        {"tolerances", [&](const json& v, const Path& p) { R.table(v, p, tol); }},
        {"verify", [&](const json& v, const Path& p) { R.table(v, p, verify); }},
        {"output", [&](const json& v, const Path& p) {
             c.output = R.str(v, p);
             if (c.output.empty()) R.fail(p, "must not be empty");
         }},
        {"seed", [&](const json& v, const Path& p) { c.seed = static_cast<unsigned>(R.integer(v, p, 0)); }},
    };
    R.table(root, {}, top);

    // cross-field checks
    if (c.n < 1 || c.n > 3) R.fail({"grid", "n"}, "dimension must be 1, 2 or 3");
    if (c.m.size() == 1) c.m.assign(c.n, c.m[0]);
    if (c.box.size() == 1) c.box.assign(c.n, c.box[0]);
    if (!have_m && static_cast<int>(c.m.size()) != c.n) c.m.assign(c.n, c.m[0]);
    if (!have_box && static_cast<int>(c.box.size()) != c.n) c.box.assign(c.n, c.box[0]);
    if (static_cast<int>(c.m.size()) != c.n) R.fail({"grid", "m"}, "needs one entry per dimension");
    if (static_cast<int>(c.box.size()) != c.n) R.fail({"grid", "box"}, "needs one entry per dimension");
    if (c.forward_k.size() == 2 && c.n != 2) c.forward_k.resize(c.n, 0.0);
    if (static_cast<int>(c.forward_k.size()) != c.n) R.fail({"forward", "k"}, "needs one entry per dimension");
    if (c.b.size() == 1 && c.b[0] != "b_bench" && c.b[0] != "zero")
        R.fail({"coefficients", "b"}, "expected b_bench, zero or a list of one SRF1 path per component");
    if (c.b.size() > 1 && static_cast<int>(c.b.size()) != c.n)
        R.fail({"coefficients", "b"}, "needs one SRF1 path per component");
    for (double f : c.lambda_fractions)
        if (f > 1.0) R.fail({"probes", "lambda_fractions"}, "fractions must not exceed 1");
    if (c.vj_fraction > 1.0) R.fail({"probes", "vj_fraction"}, "must not exceed 1");
    for (const auto& w : c.vj_omegas)
        if (static_cast<int>(w.size()) != c.n) R.fail({"probes", "vj_omegas"}, "each direction needs n entries");
    if (!c.vj_omegas.empty() && static_cast<int>(c.vj_omegas.size()) < c.n)
        R.fail({"probes", "vj_omegas"}, "needs at least n directions");
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path, 0, "cannot open config file");
    std::stringstream ss;
    ss << is.rdbuf();
    Config c = parse_config(ss.str(), path);
    const fs::path parent = fs::path(path).parent_path();
    c.base_dir = parent.empty() ? "." : parent.string();
    return c;
}

std::string config_to_json(const Config& c) {
    json j;
    j["grid"] = {{"n", c.n}, {"m", c.m}, {"nt", c.nt}, {"box", c.box}, {"T", c.T}};
    j["coefficients"] = {{"q", c.q},
                         {"q_amplitude", c.q_amplitude},
                         {"b", c.b},
                         {"b_amplitude", c.b_amplitude},
                         {"remainder", {{"kind", c.remainder}, {"c", c.remainder_c}}}};
    j["forward"] = {{"data", c.forward_data}, {"k", c.forward_k}, {"eps", c.forward_eps}, {"nonlinear", c.forward_nonlinear}};
    j["probes"] = {{"lambda_fractions", c.lambda_fractions}, {"q_directions", c.q_directions},
                   {"q_eta_max", c.q_eta_max},               {"b_directions", c.b_directions},
                   {"b_eta_max", c.b_eta_max},               {"vj_fraction", c.vj_fraction},
                   {"vj_order", c.vj_order}};
    if (!c.vj_omegas.empty()) j["probes"]["vj_omegas"] = c.vj_omegas;
    j["measurement"] = {{"source", c.data_source}, {"eps", c.measure_eps}, {"three_point", c.three_point}};
    j["eps_lab"] = {{"eps", c.eps_list}};
    j["tolerances"] = {{"solver_tol", c.solver_tol}, {"picard_tol", c.picard_tol}, {"max_iter", c.max_iter},
                       {"det_factor", c.det_factor}, {"max_flagged", c.max_flagged}};
    j["verify"] = {{"m", c.verify_m}, {"nt", c.verify_nt}};
    j["output"] = c.output;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

GridPtr config_grid(const Config& c) {
    try {
        return make_grid(c.m, c.nt, c.box, c.T);
    } catch (const GridError& e) {
        throw ConfigError("<config>", 0, std::string("grid: ") + e.what());
    }
}

std::string experiment_dir(const Config& c, const RunOptions& o) {
    const std::string out = o.output.empty() ? c.output : o.output;
    const fs::path p(out);
    return p.is_absolute() || !o.output.empty() ? p.string() : (fs::path(c.base_dir) / p).string();
}

// ---- shared pieces --------------------------------------------------------------------

namespace {

std::string resolve(const Config& c, const std::string& path) {
    const fs::path p(path);
    return p.is_absolute() ? path : (fs::path(c.base_dir) / p).string();
}

SolverOptions solver_opts(const Config& c) {
    SolverOptions s;
    s.solver_tol = c.solver_tol;
    return s;
}

PicardOptions picard_opts(const Config& c) {
    PicardOptions p;
    p.picard_tol = c.picard_tol;
    p.max_iter = c.max_iter;
    p.solver = solver_opts(c);
    return p;
}

Potential true_q(const Config& c, const GridPtr& g) {
    if (c.q == "q_bench") return q_bench(g, c.q_amplitude);
    if (c.q == "zero") return zero_potential(g);
    return read_srf1_real(resolve(c, c.q), g);
}

RealVectorField true_b(const Config& c, const GridPtr& g) {
    if (c.b.size() == 1 && c.b[0] == "b_bench") return b_bench(g, c.b_amplitude);
    RealVectorField b(g);
    if (c.b.size() == 1 && c.b[0] == "zero") return b;
    for (int a = 0; a < g->n; ++a) b.comp[a] = read_srf1_real(resolve(c, c.b[a]), g);
    return b;
}

NonlinearitySpec nonlinearity(const Config& c, const GridPtr& g) {
    NonlinearitySpec nl;
    nl.b = true_b(c, g);
    if (c.remainder == "cubic_flat") {
        nl.remainder = RemainderKind::cubic_flat;
        nl.c = c.remainder_c;
    }
    return nl;
}

struct InputData {
    Slice phi;
    BoundaryTrace f;
};

InputData forward_input(const Config& c, const GridPtr& g) {
    if (c.forward_data == "zero") {
        BoundaryTrace f(g);
        return {Slice(g->nodes()), f};
    }
    if (c.forward_data == "plane_wave") {
        ComplexField w = discrete_plane_wave(g, c.forward_k, -1);
        return {w.slice(0), BoundaryTrace::of(w)};
    }
    // flat: sin^2(pi t / T) e^{i k.x}, vanishing with its time derivative at t = 0
    const auto k = c.forward_k;
    const double T = g->T;
    ComplexField w = sample_field(g, [&k, T](double t, const double* x) {
        double ph = 0.0;
        for (std::size_t a = 0; a < k.size(); ++a) ph += k[a] * x[a];
        const double s = std::sin(M_PI * t / T);
        return s * s * std::polar(1.0, ph);
    });
    return {w.slice(0), BoundaryTrace::of(w)};
}

void prepare(const Config& c, const std::string& dir) {
    for (const char* sub : {"probes", "measurements", "recovered", "reports"}) fs::create_directories(fs::path(dir) / sub);
    std::ofstream os(fs::path(dir) / "config.json", std::ios::binary);
    if (!os) throw IoError("cannot write the config copy in " + dir);
    os << (c.text.empty() ? config_to_json(c) : c.text);
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << j.dump(2) << '\n';
}

json grid_json(const SpaceTimeGrid& g) { return {{"m", g.m}, {"nt", g.nt}, {"box", g.box}, {"T", g.T}}; }

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void say(const RunOptions& o, const std::string& s) {
    if (!o.quiet) std::cout << s << std::endl;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

int csv_stride(int count, int target) { return std::max(1, count / target); }

/// Lambda_q data persisted per probe input: raw Lambda at eps, 2 eps (and 3 eps) or direct data.
/// With `generate` unset a missing file is an error.
class StoredQSource : public QDataSource {
public:
    StoredQSource(const Config& c, GridPtr g, std::string dir, bool generate)
        : c_(c), g_(std::move(g)), dir_(std::move(dir)), generate_(generate) {
        if (generate_) {
            q_ = true_q(c_, g_);
            nl_ = nonlinearity(c_, g_);
        }
    }
    GridPtr grid() const override { return g_; }

    Measurement measure(const Slice& phi, const BoundaryTrace& f, const std::string& key) const override {
        if (c_.data_source == "direct") {
            Measurement m = fetch(key, [&] { return lambda_q(q_, phi, f, solver_opts(c_)); });
            m.input_id = key;
            return m;
        }
        const int levels = c_.three_point ? 3 : 2;
        std::vector<Measurement> ms;
        for (int j = 1; j <= levels; ++j)
            ms.push_back(fetch(key + "_e" + std::to_string(j),
                               [&] { return apply_io_map(q_, nl_, phi, f, j * c_.measure_eps, picard_opts(c_), key); }));
        Measurement g1 = c_.three_point ? extract_linearizations3(ms[0], ms[1], ms[2]).g1
                                        : extract_linearizations(ms[0], ms[1]).g1;
        g1.input_id = key;
        return g1;
    }

    std::size_t generated() const { return generated_; }

private:
    template <class Make>
    Measurement fetch(const std::string& stem_name, Make make) const {
        const std::string stem = dir_ + "/" + stem_name;
        if (fs::exists(stem + ".json")) return read_measurement(stem, g_);
        if (!generate_) throw ReconstructionError("missing measurement " + stem + " (run measure first)");
        Measurement m = make();
        write_measurement(stem, m);
        ++generated_;
        return m;
    }

    const Config& c_;
    GridPtr g_;
    std::string dir_;
    bool generate_;
    Potential q_;
    NonlinearitySpec nl_;
    mutable std::size_t generated_ = 0;
};

QSamplingOptions q_sampling(const Config& c, const GridPtr& g, int threads) {
    QSamplingOptions o;
    o.lambdas = lambda_ladder(*g, c.lambda_fractions);
    o.directions = c.q_directions;
    o.eta_max = c.q_eta_max;
    o.threads = threads;
    return o;
}

double mass_drift(const ComplexField& u) {
    const auto& g = *u.grid;
    std::vector<double> w(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) w[i] = trapezoid_node_weight(g, i);
    double n0 = 0.0, worst = 0.0;
    for (std::size_t k = 0; k < g.levels(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.nodes(); ++i) s += w[i] * std::norm(u.at(k, i));
        s = std::sqrt(s);
        if (k == 0) n0 = s;
        worst = std::max(worst, std::abs(s - n0));
    }
    return n0 > 0.0 ? worst / n0 : worst;
}

bool zero_lateral(const BoundaryTrace& f) {
    for (const auto& lv : f.lateral)
        for (const auto& z : lv)
            if (z != cplx{}) return false;
    return true;
}

}  // namespace

// ---- stages -----------------------------------------------------------------------------

void run_forward(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("forward", [&] {
        Timer t;
        prepare(c, dir);
        GridPtr g = config_grid(c);
        Potential q = true_q(c, g);
        NonlinearitySpec nl = nonlinearity(c, g);
        InputData in = forward_input(c, g);
        json rep;
        rep["grid"] = grid_json(*g);
        rep["data"] = c.forward_data;
        rep["eps"] = c.forward_eps;
        ComplexField u;
        if (c.forward_nonlinear && nl.active()) {
            NonlinearResult r = solve_nonlinear(q, nl, in.phi, in.f, c.forward_eps, picard_opts(c));
            u = std::move(r.u);
            rep["nonlinear"] = true;
            rep["picard_iterations"] = r.report.iterations;
            rep["residual"] = r.report.residual;
        } else {
            u = solve_linear(q, in.phi, in.f, solver_opts(c));
            u *= c.forward_eps;
            rep["nonlinear"] = false;
            rep["residual"] = cn_residual(q, u, nullptr, +1);
        }
        rep["sup_l2"] = sup_l2(u);
        if (zero_lateral(in.f)) rep["mass_drift"] = mass_drift(u);
        rep["field"] = "recovered/u_forward.srf";
        write_srf1(dir + "/recovered/u_forward.srf", u);
        write_csv(dir + "/recovered/u_forward.csv", u, csv_stride(g->nt, 16), csv_stride(g->m[0], 32));
        write_json(dir + "/reports/forward.json", rep);
        say(o, "forward: sup_l2 " + fmt(sup_l2(u)) + " (" + fmt(t.seconds()) + " s)");
    });
}

void run_measure(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("measure", [&] {
        Timer t;
        prepare(c, dir);
        GridPtr g = config_grid(c);
        StoredQSource src(c, g, dir + "/measurements", true);
        QSamplingReport qr;
        auto qo = q_sampling(c, g, o.threads);
        sample_q_matched(src, qo, &qr);
        json dict = json::array();
        for (const auto& sp : q_probe_dictionary(*g, qo))
            dict.push_back({{"key", probe_key(sp)}, {"lambda", sp.lambda}, {"omega", sp.omega}});
        write_json(dir + "/probes/q_dictionary.json", dict);
        json rep;
        rep["grid"] = grid_json(*g);
        rep["source"] = c.data_source;
        rep["eps"] = c.data_source == "direct" ? json(nullptr) : json(c.measure_eps);
        rep["scheme"] = c.three_point ? "three_point" : "two_point";
        rep["probes_used"] = qr.probes;
        rep["dictionary_size"] = dict.size();
        write_json(dir + "/reports/measure.json", rep);
        say(o, "measure: " + std::to_string(qr.probes) + " probe inputs, " + std::to_string(src.generated()) +
                   " new files (" + fmt(t.seconds()) + " s)");
    });
}

void run_reconstruct_q(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("reconstruct-q", [&] {
        Timer t;
        prepare(c, dir);
        GridPtr g = config_grid(c);
        StoredQSource src(c, g, dir + "/measurements", false);
        QSamplingReport qr;
        FourierSampleSet s = sample_q_matched(src, q_sampling(c, g, o.threads), &qr);
        InversionResult inv = invert_q(s, true);
        Potential truth = true_q(c, g);
        QErrorReport er = q_error(inv.q, truth, inv.imag_ratio);
        write_srf1(dir + "/recovered/q.srf", inv.q);
        write_csv(dir + "/recovered/q.csv", inv.q, csv_stride(g->nt, 16), csv_stride(g->m[0], 32));
        json rep;
        rep["grid"] = grid_json(*g);
        rep["l2_rel"] = er.l2_rel;
        rep["linf_rel"] = er.linf_rel;
        rep["imag_ratio"] = er.imag_ratio;
        rep["lambda_used"] = qr.lambdas;
        rep["probes"] = qr.probes;
        rep["unreached"] = qr.unreached;
        rep["populated"] = s.count_populated();
        rep["max_eta"] = qr.max_eta;
        rep["mean_eta"] = qr.mean_eta;
        write_json(dir + "/reports/reconstruct_q.json", rep);
        say(o, "reconstruct-q: l2_rel " + fmt(er.l2_rel) + ", imag_ratio " + fmt(er.imag_ratio) + " (" +
                   fmt(t.seconds()) + " s)");
    });
}

void run_reconstruct_b(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("reconstruct-b", [&] {
        Timer t;
        prepare(c, dir);
        GridPtr g = config_grid(c);
        const std::string qpath = dir + "/recovered/q.srf";
        if (!fs::exists(qpath)) throw ReconstructionError("recovered q not found at " + qpath + " (run reconstruct-q first)");
        Potential qrec = read_srf1_real(qpath, g);
        Potential qtrue = true_q(c, g);
        RealVectorField btrue = true_b(c, g);

        double hmax = 0.0;
        for (double h : g->h) hmax = std::max(hmax, h);
        const double lam_v = c.vj_fraction * kResolutionCap / hmax;
        std::vector<std::vector<double>> omegas = c.vj_omegas;
        if (omegas.empty())
            for (int a = 0; a < g->n; ++a) {
                std::vector<double> e(g->n, 0.0);
                e[a] = 1.0;
                omegas.push_back(e);
            }
        VjFamily fam = build_vj_family(qrec, lam_v, omegas, c.vj_order, solver_opts(c));
        ProbeCache cache = ProbeCache::from_env(dir + "/probes");
        std::vector<ComplexField> vs;
        for (const auto& mem : fam.members) {
            cache.store(ProbeCache::key(mem.spec, *g, &qrec, "vj"), mem.field);
            vs.push_back(mem.field);
        }

        TransposedCrossSource src(qtrue, btrue, solver_opts(c));
        BSamplingOptions bo;
        bo.lambdas = lambda_ladder(*g, c.lambda_fractions);
        bo.directions = c.b_directions;
        bo.eta_max = c.b_eta_max;
        bo.threads = o.threads;
        BSamplingReport br;
        auto S = sample_bv_matched(src, vs, bo, &br);
        std::vector<BvField> bvs;
        json bv_err = json::array();
        for (std::size_t j = 0; j < vs.size(); ++j) {
            bvs.push_back(recover_bv(S[j], static_cast<int>(j)));
            const BvField exact = bv_of(btrue, vs[j]);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < exact.halves.size(); ++i)
                num += std::norm(bvs[j].halves[i] - exact.halves[i]), den += std::norm(exact.halves[i]);
            bv_err.push_back(den > 0.0 ? std::sqrt(num / den) : std::sqrt(num));
        }
        PointwiseOptions po;
        po.det_factor = c.det_factor;
        po.max_flagged = c.max_flagged;
        PointwiseResult res = solve_pointwise_b(bvs, fam, po);
        BErrorReport er = b_error(res.b, btrue);

        for (int a = 0; a < g->n; ++a) {
            const std::string stem = dir + "/recovered/b_" + std::to_string(a);
            write_srf1(stem + ".srf", res.b.comp[a]);
            write_csv(stem + ".csv", res.b.comp[a], csv_stride(g->nt, 16), csv_stride(g->m[0], 32));
        }
        // determinant-coverage map: level k holds the flags of half level k, the last level repeats
        RealField flags(g);
        const std::size_t nodes = g->nodes();
        for (std::size_t k = 0; k < g->levels(); ++k) {
            const std::size_t kh = std::min<std::size_t>(k, g->nt - 1);
            for (std::size_t i = 0; i < nodes; ++i) flags.at(k, i) = res.flagged[kh * nodes + i];
        }
        write_srf1(dir + "/recovered/b_flagged.srf", flags);

        json rep;
        rep["grid"] = grid_json(*g);
        rep["l2_rel"] = er.l2_rel;
        rep["linf_rel"] = er.linf_rel;
        rep["imag_ratio"] = res.imag_ratio;
        rep["coverage"] = res.coverage;
        rep["delta_det"] = res.delta_det;
        rep["lambda_v"] = lam_v;
        rep["min_det_ratio"] = fam.min_det_ratio;
        rep["bv_l2_rel"] = bv_err;
        rep["probes_used"] = br.probes_used;
        rep["unreached"] = br.unreached;
        rep["max_eta"] = br.max_eta;
        rep["q_source"] = "recovered/q.srf";
        write_json(dir + "/reports/reconstruct_b.json", rep);
        say(o, "reconstruct-b: l2_rel " + fmt(er.l2_rel) + ", coverage " + fmt(res.coverage) + ", imag_ratio " +
                   fmt(res.imag_ratio) + " (" + fmt(t.seconds()) + " s)");
    });
}

void run_eps_lab(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("eps-lab", [&] {
        Timer t;
        prepare(c, dir);
        GridPtr g = config_grid(c);
        Potential q = true_q(c, g);
        NonlinearitySpec nl = nonlinearity(c, g);
        InputData in = forward_input(c, g);
        ExpansionReport ex = expansion_residual_study(q, nl, in.phi, in.f, c.eps_list, picard_opts(c), o.threads);
        ContractionScan cs = contraction_scan(q, nl, in.phi, in.f, c.eps_list, picard_opts(c), o.threads);
        AdmissibilityOptions ao;
        ao.n = g->n;
        ao.seed = c.seed;
        AdmissibilityReport ad = check_remainder_admissibility(nl, ao);

        json rep;
        rep["grid"] = grid_json(*g);
        json e;
        e["eps"] = ex.eps;
        e["residual"] = ex.residual;
        e["relative"] = ex.relative;
        e["excluded"] = ex.excluded;
        e["dropped"] = ex.dropped;
        e["slope"] = ex.slope;
        e["intercept"] = ex.intercept;
        e["fit_residuals"] = ex.fit_residuals;
        e["fitted"] = ex.fitted;
        rep["expansion"] = e;
        json runs = json::array();
        for (const auto& r : cs.runs)
            runs.push_back({{"eps", r.eps},
                            {"rho", r.rho},
                            {"iterations", r.iterations},
                            {"converged", r.converged},
                            {"failed", r.failed},
                            {"increments", r.increments}});
        rep["contraction"] = {{"runs", runs}, {"halving_ratios", cs.halving_ratios}, {"monotone", cs.monotone}};
        rep["admissibility"] = {{"admissible", ad.admissible}, {"C", ad.C},         {"bounded", ad.bounded},
                                {"flat", ad.flat},             {"flat_ratio", ad.flat_ratio}, {"reason", ad.reason}};
        write_json(dir + "/reports/eps_lab.json", rep);
        write_expansion_csv(dir + "/reports/eps_lab.csv", ex);
        say(o, "eps-lab: slope " + fmt(ex.slope) + " over " + std::to_string(ex.fitted) + " points, admissible " +
                   (ad.admissible ? "yes" : "no") + " (" + fmt(t.seconds()) + " s)");
    });
}

// ---- verify -----------------------------------------------------------------------------

namespace {

struct Check {
    std::string name;
    double value;
    double lo;
    double hi;
    bool pass() const { return value >= lo && value <= hi; }
};

}  // namespace

bool run_verify(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    return stage("verify", [&] {
        if (c.n != 2) throw ReconstructionError("the invariant suite runs in two dimensions");
        prepare(c, dir);
        std::vector<Check> checks;
        std::mt19937 rng(c.seed);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        const int vm = c.verify_m, vnt = c.verify_nt;
        GridPtr g = make_grid(std::vector<int>(c.n, vm), vnt, c.box, c.T);
        Potential q = q_bench(g, c.q_amplitude);
        const SolverOptions so = solver_opts(c);

        {  // mass conservation
            ComplexField w = sample_field(g, [](double, const double* x) {
                return cplx(std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]), 0.0);
            });
            BoundaryTrace zero(g);
            ComplexField u = solve_linear(q, w.slice(0), zero, so);
            checks.push_back({"mass_drift", mass_drift(u), 0.0, 1e-8});
        }
        {  // second order under (h, dt) halving
            auto err = [&](int m, int nt) {
                GridPtr gg = make_unit_grid(2, m, nt);
                const double w = 2.0 * M_PI * M_PI;
                auto u = [](double t, const double* x) {
                    return std::polar(1.0, t) * std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]);
                };
                auto ut = [&](double t, const double* x) { return cplx(0.0, 1.0) * u(t, x); };
                auto lap = [&](double t, const double* x) { return -w * u(t, x); };
                ManufacturedProblem mp = manufactured_problem(gg, u, ut, lap, zero_potential(gg));
                ComplexField s = solve_ibvp(zero_potential(gg), mp.phi, mp.f, &mp.F, +1, so);
                return sup_l2(s - mp.exact);
            };
            checks.push_back({"order_ratio", err(9, 8) / err(17, 16), 3.3, 4.7});
        }
        {  // q identity oracle
            double worst = 0.0;
            for (int trial = 0; trial < 3; ++trial) {
                std::vector<double> K{6.0 * U(rng), 6.0 * U(rng)}, Kv{4.0 * U(rng), 4.0 * U(rng)};
                ComplexField P = discrete_plane_wave(g, K, -1), V = discrete_plane_wave(g, Kv, +1);
                Potential qq = q_bench(g, 2.0 * (1.0 + U(rng)));
                ComplexField u1 = solve_linear(qq, P.slice(0), BoundaryTrace::of(P), so);
                const cplx inner = q_identity_interior(qq, u1, V);
                const cplx outer = assemble_q_identity(lambda_q_of(u1), P.slice(0), BoundaryTrace::of(P), V);
                worst = std::max(worst, std::abs(inner - outer) / std::abs(inner));
            }
            checks.push_back({"q_identity_rel", worst, 0.0, 1e-4});
        }
        {  // b identity oracle
            double worst = 0.0;
            RealVectorField b = b_bench(g, c.b_amplitude);
            DirectBSource src(q, b, so);
            for (int trial = 0; trial < 2; ++trial) {
                std::vector<double> Ka{6.0 * U(rng), 6.0 * U(rng)}, Kb{6.0 * U(rng), 6.0 * U(rng)},
                    Kv{3.0 * U(rng), 3.0 * U(rng)};
                ComplexField A = discrete_plane_wave(g, Ka, -1), B = discrete_plane_wave(g, Kb, -1);
                ComplexField V0 = discrete_plane_wave(g, Kv, +1);
                ComplexField v = solve_adjoint(q, V0.slice(0), BoundaryTrace::of(V0), so);
                PolarizedDatum d =
                    polarize(src, A.slice(0), BoundaryTrace::of(A), B.slice(0), BoundaryTrace::of(B), "verify");
                const cplx outer = assemble_b_identity(d.cross, v);
                const cplx inner = b_identity_interior(b, solve_linear(q, A.slice(0), BoundaryTrace::of(A), so),
                                                       solve_linear(q, B.slice(0), BoundaryTrace::of(B), so), v);
                worst = std::max(worst, std::abs(inner - outer) / std::abs(inner));
            }
            checks.push_back({"b_identity_rel", worst, 0.0, 1e-3});
        }
        {  // polarization and extraction are exact on quadratic synthetic data
            std::normal_distribution<double> N;
            auto rnd = [&] {
                Measurement m(g);
                for (auto& z : m.final_state) z = {N(rng), N(rng)};
                for (auto& lv : m.flux.lateral)
                    for (auto& z : lv) z = {N(rng), N(rng)};
                return m;
            };
            Measurement A = rnd(), B = rnd(), X = rnd(), Y = rnd();
            auto M = [&](cplx s) { return A + std::norm(s) * B + std::conj(s) * X + s * Y; };
            PolarizedDatum d = polarize(M(1.0), M(-1.0), M(cplx(0, 1)), M(cplx(0, -1)));
            checks.push_back({"polarization_rel", (d.cross - X).norm() / X.norm(), 0.0, 1e-12});
            const double e = 0.01;
            Measurement L1 = e * A + (e * e) * B, L2 = (2 * e) * A + (4 * e * e) * B;
            L1.eps = e;
            L2.eps = 2 * e;
            LinearizedPair lp = extract_linearizations(L1, L2);
            checks.push_back({"extraction_rel", std::max((lp.g1 - A).norm() / A.norm(), (lp.g2 - B).norm() / B.norm()),
                              0.0, 1e-10});
        }
        {  // pointwise solve on the free plane-wave family; determinant of the orthonormal family
            std::vector<std::vector<double>> om;
            for (int a = 0; a < g->n; ++a) {
                std::vector<double> e(g->n, 0.0);
                e[a] = 1.0;
                om.push_back(e);
            }
            VjFamily fam = build_vj_family(zero_potential(g), 4.0, om, 0, so);
            RealVectorField b(g);
            for (int a = 0; a < g->n; ++a) std::fill(b.comp[a].data.begin(), b.comp[a].data.end(), 0.3 + 0.2 * a);
            std::vector<BvField> bv;
            for (const auto& mem : fam.members) bv.push_back(bv_of(b, mem.field));
            PointwiseResult r = solve_pointwise_b(bv, fam);
            double err = 0.0;
            for (int a = 0; a < g->n; ++a)
                for (double x : r.b.comp[a].data) err = std::max(err, std::abs(x - (0.3 + 0.2 * a)));
            checks.push_back({"pointwise_analytic_err", err, 0.0, 1e-6});
            checks.push_back({"min_det_ratio_free", fam.min_det_ratio, 0.5, INFINITY});
        }
        {  // linear and quadratic homogeneity
            ComplexField P = discrete_plane_wave(g, {3.0, -2.0}, -1);
            RealVectorField b = b_bench(g, c.b_amplitude);
            ComplexField u1 = solve_linear(q, P.slice(0), BoundaryTrace::of(P), so);
            ComplexField P2 = 3.0 * P;
            ComplexField u1d = solve_linear(q, P2.slice(0), BoundaryTrace::of(P2), so);
            checks.push_back({"u1_linear_rel", sup_l2(u1d - 3.0 * u1) / sup_l2(u1), 0.0, 1e-9});
            ComplexField u2 = compute_u2(q, b, u1, false, so), u2d = compute_u2(q, b, u1d, false, so);
            checks.push_back({"u2_quadratic_rel", sup_l2(u2d - 9.0 * u2) / sup_l2(u2), 0.0, 1e-9});
        }
        {  // remainder admissibility
            NonlinearitySpec cubic;
            cubic.remainder = RemainderKind::cubic_flat;
            cubic.c = 1.0;
            AdmissibilityOptions ao;
            ao.n = g->n;
            ao.seed = c.seed;
            checks.push_back({"cubic_flat_admissible", check_remainder_admissibility(cubic, ao).admissible ? 1.0 : 0.0, 1.0, 1.0});
            const int n = g->n;
            RemainderFn quad = [n](double, const double*, const cplx* p) {
                double s = 0.0;
                for (int a = 0; a < n; ++a) s += std::norm(p[a]);
                std::vector<cplx> r(n);
                for (int a = 0; a < n; ++a) r[a] = std::sqrt(s) * p[a];
                return r;
            };
            checks.push_back({"quadratic_rejected", check_remainder_admissibility(quad, ao).admissible ? 0.0 : 1.0, 1.0, 1.0});
        }
        {  // epsilon expansion slope
            NonlinearitySpec nl;
            nl.b = b_bench(g, c.b_amplitude);
            Config cc = c;
            cc.forward_data = "flat";
            cc.forward_k = std::vector<double>(g->n, 0.0);
            cc.forward_k[0] = 2.0;
            if (g->n > 1) cc.forward_k[1] = 1.0;
            InputData in = forward_input(cc, g);
            ExpansionReport ex = expansion_residual_study(q, nl, in.phi, in.f, {0.2, 0.1, 0.05, 0.025}, picard_opts(c), o.threads);
            checks.push_back({"expansion_slope", ex.slope, 2.7, 3.3});
        }

        bool all = true;
        json arr = json::array();
        for (const auto& ch : checks) {
            all = all && ch.pass();
            arr.push_back({{"name", ch.name},
                           {"value", ch.value},
                           {"lo", ch.lo},
                           {"hi", std::isfinite(ch.hi) ? json(ch.hi) : json(nullptr)},
                           {"pass", ch.pass()}});
            say(o, std::string(ch.pass() ? "PASS " : "FAIL ") + ch.name + " = " + fmt(ch.value));
        }
        write_json(dir + "/reports/verify.json", {{"grid", grid_json(*g)}, {"checks", arr}, {"all_pass", all}});
        return all;
    });
}

void run_report(const Config& c, const RunOptions& o) {
    const std::string dir = experiment_dir(c, o);
    stage("report", [&] {
        const fs::path rdir = fs::path(dir) / "reports";
        if (!fs::exists(rdir)) throw IoError("no reports directory in " + dir);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(rdir))
            if (e.path().extension() == ".json" && e.path().filename() != "summary.json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        json sum;
        for (const auto& f : files) {
            std::ifstream is(f);
            json j = json::parse(is, nullptr, false);
            if (j.is_discarded()) throw IoError(f.string() + ": not valid JSON");
            sum[f.stem().string()] = j;
        }
        write_json((rdir / "summary.json").string(), sum);
        for (auto it = sum.begin(); it != sum.end(); ++it) {
            std::string line = it.key() + ":";
            for (const char* k : {"l2_rel", "imag_ratio", "coverage", "all_pass", "sup_l2", "probes_used"})
                if (it.value().contains(k)) line += std::string(" ") + k + "=" + it.value()[k].dump();
            if (it.value().contains("expansion")) line += " slope=" + it.value()["expansion"]["slope"].dump();
            say(o, line);
        }
    });
}

}  // namespace dsi
