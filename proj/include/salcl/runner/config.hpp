#pragma once

#include <string>

#include <json.hpp>

#include "salcl/data/scenario.hpp"
#include "salcl/saliency/saliency.hpp"
#include "salcl/train/train.hpp"

namespace salcl::runner {

using ordered_json = nlohmann::ordered_json;

struct EvalOptions {
    std::string pointing_game = "auto"; // auto | on | off
    int batch_size = 64;
};

// One experiment = scenario + model + strategy + saliency method + buffer +
// output location, all under a single master seed.
struct ExperimentConfig {
    uint32_t schema_version = 1;
    uint64_t seed = 0;
    std::string precision = "float32"; // float32 | float64
    data::ScenarioSpec scenario;       // scenario.seed is derived from `seed`
    nn::ClassifierSpec model;
    train::TrainConfig train;
    sal::SaliencySpec saliency;
    int64_t buffer_capacity = 0;
    int few_shot_base_per_class = 4;
    int few_shot_novel_per_class = 1;
    EvalOptions eval;
    std::string output_dir;
    bool archive_checkpoints = false;

    static ExperimentConfig from_json(const ordered_json& j);
    static ExperimentConfig from_file(const std::string& path);

    // Canonical form: parse -> to_json is a fixed point, used for the run-dir
    // copy and for hashing.
    ordered_json to_json() const;
    uint64_t config_hash() const;
    // Hash with seed and output masked: runs of one arm across seeds share it.
    uint64_t arm_hash() const;
    std::string arm_label() const;

    void validate() const; // cross-field checks, ConfigError with field paths
};

} // namespace salcl::runner
