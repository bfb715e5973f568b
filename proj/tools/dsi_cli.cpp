// dsi_cli: batch driver for the forward solver, data synthesis and the reconstructions.
//
// Exit status: 0 success, 1 pipeline failure (the failing stage is named), 2 bad config or usage.

#include <iostream>

#include "CLI11.hpp"
#include "dsi/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Dynamical Schrodinger inverse-problem toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    dsi::RunOptions ro;

    auto add = [&](const char* name, const char* help) {
        CLI::App* s = app.add_subcommand(name, help);
        s->add_option("-c,--config", config_path, "Experiment config (JSON, comments allowed)")->check(CLI::ExistingFile);
        s->add_option("--threads", ro.threads, "Worker threads; 1 is the reproducible path")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        s->add_option("-o,--output", ro.output, "Experiment directory (overrides the config)");
        s->add_flag("-q,--quiet", ro.quiet, "Only report failures");
        return s;
    };
    auto* forward = add("forward", "Solve the configured IBVP and store the field");
    auto* measure = add("measure", "Synthesize Lambda_q data for the probe dictionary");
    auto* rq = add("reconstruct-q", "Recover q from stored measurements");
    auto* rb = add("reconstruct-b", "Recover b using the recovered q");
    auto* eps = add("eps-lab", "Expansion residual, Picard contraction and remainder checks");
    auto* verify = add("verify", "Run the invariant suite on a reduced grid");
    auto* report = add("report", "Aggregate reports/*.json into reports/summary.json");
    app.footer("Environment: DSI_PROBE_CACHE overrides the probe cache directory (default <output>/probes).");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    dsi::Config cfg;
    try {
        cfg = config_path.empty() ? dsi::Config{} : dsi::load_config(config_path);
        dsi::config_grid(cfg);
    } catch (const dsi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (forward->parsed()) dsi::run_forward(cfg, ro);
        if (measure->parsed()) dsi::run_measure(cfg, ro);
        if (rq->parsed()) dsi::run_reconstruct_q(cfg, ro);
        if (rb->parsed()) dsi::run_reconstruct_b(cfg, ro);
        if (eps->parsed()) dsi::run_eps_lab(cfg, ro);
        if (report->parsed()) dsi::run_report(cfg, ro);
        if (verify->parsed() && !dsi::run_verify(cfg, ro)) {
            std::cerr << "stage verify failed: invariant checks did not pass (see reports/verify.json)\n";
            return 1;
        }
    } catch (const dsi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dsi::StageError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
