// salcl: saliency-guided class-incremental learning experiments.
//
//   salcl run <config.json>
//   salcl compare <run_dir>... --out <dir>
//   salcl visualize <run_dir> --sample <task:index> --checkpoints <k,...>

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "salcl/runner/experiment.hpp"

using namespace salcl;

int main(int argc, char** argv) {
    CLI::App app{"saliency-guided continual-learning toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    CLI::App* run = app.add_subcommand("run", "execute one experiment from a config file");
    run->add_option("config", config_path, "experiment config (json)")->required();

    std::vector<std::string> run_dirs;
    std::string out_dir;
    CLI::App* cmp = app.add_subcommand("compare", "aggregate completed runs into a table + plot");
    cmp->add_option("dirs", run_dirs, "run directories")->required()->expected(-2);
    cmp->add_option("--out", out_dir, "output directory")->required();

    std::string viz_dir, sample_spec;
    std::vector<int> checkpoints;
    CLI::App* viz = app.add_subcommand("visualize",
                                       "saliency progression for a sample across checkpoints");
    viz->add_option("run_dir", viz_dir, "completed run directory")->required();
    viz->add_option("--sample", sample_spec, "test sample as task:index")->required();
    viz->add_option("--checkpoints", checkpoints, "task checkpoints to render")
        ->required()
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const auto cfg = runner::ExperimentConfig::from_file(config_path);
            const auto dir = runner::run_experiment(cfg);
            std::printf("run complete: %s\n", dir.string().c_str());
        } else if (cmp->parsed()) {
            runner::compare_runs(run_dirs, out_dir);
            std::printf("comparison written to %s\n", out_dir.c_str());
        } else if (viz->parsed()) {
            const auto out = runner::visualize_run(viz_dir, sample_spec, checkpoints);
            std::printf("progression written to %s\n", out.string().c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
