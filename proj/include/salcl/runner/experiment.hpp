#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "salcl/runner/config.hpp"

namespace salcl::runner {

// Resolved run directory; SALCL_OUTPUT_ROOT, when set, re-roots relative
// output dirs.
std::filesystem::path resolve_output_dir(const std::string& configured);

// Executes the full task sequence: train -> buffer update -> regularizer
// snapshot -> evaluate row k, then writes R.csv, summary.json, train_log.csv,
// buffer/model checkpoints and a manifest. Returns the run directory.
std::filesystem::path run_experiment(const ExperimentConfig& cfg);

// Aggregates >= 2 completed runs: groups multi-seed runs by arm, emits a
// per-task mean-accuracy table (mean +- std) and a curve figure.
void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Saliency-progression grid for one test sample across archived checkpoints.
// sample_spec is "task:index"; checkpoint ids are 1-based task numbers.
std::filesystem::path visualize_run(const std::string& run_dir, const std::string& sample_spec,
                                    const std::vector<int>& checkpoints);

} // namespace salcl::runner
