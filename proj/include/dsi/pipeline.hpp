#pragma once

#include <string>
#include <vector>

#include "dsi/grid.hpp"

namespace dsi {

/// Malformed configuration; `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& file, int line, const std::string& msg);
    int line = 0;
};

/// Pipeline failure in a named stage.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& msg);
    std::string stage;
};

/// Experiment configuration. A JSON file (comments allowed) with the tables
/// grid, coefficients, forward, probes, measurement, eps_lab, tolerances, verify
/// and the scalars output and seed. Absent keys keep these defaults.
struct Config {
    // grid
    int n = 2;
    std::vector<int> m{64, 64};
    int nt = 128;
    std::vector<double> box{1.0, 1.0};
    double T = 1.0;

    // coefficients: "q_bench" | "zero" | SRF1 path
    std::string q = "q_bench";
    double q_amplitude = 2.0;
    // "b_bench" | "zero" | list of n SRF1 paths
    std::vector<std::string> b{"b_bench"};
    double b_amplitude = 1.0;
    std::string remainder = "none";  // "none" | "cubic_flat"
    double remainder_c = 0.0;

    // forward: data "zero" | "flat" | "plane_wave"
    std::string forward_data = "flat";
    std::vector<double> forward_k{2.0, 1.0};
    double forward_eps = 0.1;
    bool forward_nonlinear = true;

    // probes
    std::vector<double> lambda_fractions{0.25, 0.5, 1.0};
    int q_directions = 96;
    double q_eta_max = 2.0;
    int b_directions = 48;
    double b_eta_max = 4.0;
    /// lambda of the b-stage adjoint family as a fraction of the resolution cap.
    double vj_fraction = 0.125;
    int vj_order = 1;
    /// Empty: the coordinate axes.
    std::vector<std::vector<double>> vj_omegas;

    // measurement
    std::string data_source = "extracted";  // "extracted" | "direct"
    /// The q identity cancels O(lambda) boundary terms down to an O(1) signal, so g1 must be accurate
    /// to far better than the two-point O(eps^2) error at moderate eps.
    double measure_eps = 1e-6;
    bool three_point = false;

    // eps lab
    std::vector<double> eps_list{0.2, 0.1, 0.05, 0.025};

    // tolerances
    double solver_tol = 1e-10;
    double picard_tol = 1e-10;
    int max_iter = 50;
    double det_factor = 0.1;
    double max_flagged = 0.2;

    // verify: reduced grid for the invariant suite
    int verify_m = 24;
    int verify_nt = 32;

    std::string output = "experiment";
    unsigned seed = 1;

    /// Directory of the config file (relative paths resolve against it) and its verbatim text.
    std::string base_dir = ".";
    std::string text;
};

Config parse_config(const std::string& text, const std::string& name = "<config>");
Config load_config(const std::string& path);
/// Canonical JSON of every setting.
std::string config_to_json(const Config& c);

GridPtr config_grid(const Config& c);

struct RunOptions {
    int threads = 1;
    /// Overrides Config::output when non-empty.
    std::string output;
    bool quiet = false;
};

/// Stages. Each writes into the experiment directory (config copy, probes/, measurements/,
/// recovered/, reports/) and throws StageError naming the failing stage.
void run_forward(const Config& c, const RunOptions& o);
void run_measure(const Config& c, const RunOptions& o);
void run_reconstruct_q(const Config& c, const RunOptions& o);
void run_reconstruct_b(const Config& c, const RunOptions& o);
void run_eps_lab(const Config& c, const RunOptions& o);
/// Returns true when every invariant check passes.
bool run_verify(const Config& c, const RunOptions& o);
void run_report(const Config& c, const RunOptions& o);

std::string experiment_dir(const Config& c, const RunOptions& o);

}  // namespace dsi
