#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedlws/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Federated learning with adaptive layer-wise weight shrinking"};
    app.require_subcommand(1);

    fedlws::GlobalOptions options;
    std::uint64_t seed = 0;
    std::string output_dir;
    std::size_t threads = 1;
    auto* seed_opt = app.add_option("--seed-override", seed, "Replace every seed in the configuration");
    auto* out_opt = app.add_option("--output-dir", output_dir, "Directory that receives run outputs");
    auto* threads_opt =
        app.add_option("--threads", threads, "Worker threads for client training")->check(CLI::PositiveNumber);

    std::string run_config;
    auto* run = app.add_subcommand("run", "Run one experiment from a YAML config");
    run->add_option("config", run_config, "Experiment config")->required();

    std::string sweep_spec;
    auto* sweep = app.add_subcommand("sweep", "Run a grid of experiments over one axis and seeds");
    sweep->add_option("sweepspec", sweep_spec, "Sweep spec")->required();

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Summarize finished runs into TSV tables");
    report->add_option("dir", report_dir, "Run or sweep directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? fedlws::kExitOk : fedlws::kExitValidation;
    }

    if (*seed_opt) options.seed_override = seed;
    if (*out_opt) options.output_dir = output_dir;
    if (*threads_opt) options.threads = threads;

    try {
        if (*run) return fedlws::cmd_run(run_config, options, std::cerr);
        if (*sweep) return fedlws::cmd_sweep(sweep_spec, options, std::cerr);
        if (*report) return fedlws::cmd_report(report_dir, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return fedlws::kExitRuntime;
    }
    return fedlws::kExitValidation;
}
