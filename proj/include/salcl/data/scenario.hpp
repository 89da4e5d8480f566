#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "salcl/core/rng.hpp"
#include "salcl/core/tensor.hpp"
#include "salcl/io/png.hpp"

namespace salcl::data {

// Class-incremental task streams. A scenario is T tasks with pairwise
// disjoint class sets; few-shot mode uses a large base task followed by
// C-way K-shot increments with intact test sets.

struct SyntheticParams {
    std::vector<std::string> shapes = {"disk", "square", "triangle", "cross", "ring"};
    std::vector<std::array<float, 3>> colors = {
        {0.95f, 0.25f, 0.20f}, {0.20f, 0.55f, 0.95f}, {0.25f, 0.85f, 0.35f},
        {0.95f, 0.80f, 0.20f}, {0.80f, 0.30f, 0.90f}, {0.15f, 0.85f, 0.85f},
    };
    double noise_amplitude = 0.10;      // white-noise texture on the background
    double brightness_min = 0.15;
    double brightness_max = 0.45;
    double object_scale_min = 0.10;     // object area as a fraction of the image
    double object_scale_max = 0.40;
    int train_per_class = 100;
    int test_per_class = 25;
};

enum class Source { synthetic, folder };

struct ScenarioSpec {
    int total_classes = 10;
    int num_tasks = 5;
    int base_classes = 0;    // 0 = standard CIL
    int shots_per_class = 0; // few-shot K; 0 = "all"
    int ways_per_task = 2;
    int image_h = 32;
    int image_w = 32;
    uint64_t seed = 0;
    Source source = Source::synthetic;
    std::string folder_path;
    double folder_test_fraction = 0.2;
    SyntheticParams synthetic;

    void validate() const {
        check_config(total_classes > 0 && num_tasks > 0 && ways_per_task > 0 && image_h > 0 &&
                         image_w > 0,
                     "scenario: counts must be positive");
        check_config(base_classes >= 0, "scenario: base_classes must be >= 0");
        check_config(shots_per_class >= 0, "scenario: shots_per_class must be >= 0 (0 = all)");
        if (base_classes == 0) {
            check_config(num_tasks * ways_per_task == total_classes,
                         "scenario: T*C = total_classes violated: " + std::to_string(num_tasks) +
                             "*" + std::to_string(ways_per_task) +
                             " != " + std::to_string(total_classes));
        } else {
            check_config(
                base_classes + (num_tasks - 1) * ways_per_task == total_classes,
                "scenario: b + (T-1)*C = total_classes violated: " + std::to_string(base_classes) +
                    " + " + std::to_string(num_tasks - 1) + "*" + std::to_string(ways_per_task) +
                    " != " + std::to_string(total_classes));
            check_config(shots_per_class > 0,
                         "scenario: few-shot mode (base_classes > 0) requires shots_per_class > 0");
        }
        if (source == Source::synthetic) {
            check_config(static_cast<int>(synthetic.shapes.size() * synthetic.colors.size()) >=
                             total_classes,
                         "scenario: |shapes| x |colors| = " +
                             std::to_string(synthetic.shapes.size() * synthetic.colors.size()) +
                             " cannot cover " + std::to_string(total_classes) + " classes");
            check_config(synthetic.train_per_class > 0 && synthetic.test_per_class > 0,
                         "scenario: per-class sample counts must be positive");
            if (shots_per_class > 0)
                check_config(shots_per_class <= synthetic.train_per_class,
                             "scenario: shots_per_class exceeds the per-class train pool");
            check_config(synthetic.object_scale_min > 0 &&
                             synthetic.object_scale_max < 1.0 &&
                             synthetic.object_scale_min <= synthetic.object_scale_max,
                         "scenario: object_scale range must satisfy 0 < min <= max < 1");
        } else {
            check_config(!folder_path.empty(), "scenario: folder source needs folder_path");
            check_config(folder_test_fraction > 0 && folder_test_fraction < 1,
                         "scenario: folder_test_fraction must be in (0,1)");
        }
    }

    bool few_shot() const { return base_classes > 0; }
    int classes_in_task(int task_id /*1-based*/) const {
        if (base_classes == 0) return ways_per_task;
        return task_id == 1 ? base_classes : ways_per_task;
    }
};

struct Sample {
    Tensor<float> image;        // (3,H,W) in [0,1]
    int label = -1;             // global class id
    std::vector<uint8_t> mask;  // H*W booleans; empty when unavailable

    bool has_mask() const { return !mask.empty(); }
};

struct TaskData {
    int task_id = 0; // 1-based
    std::vector<int> class_ids;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// ---------------------------------------------------------------------------
// Synthetic generator: one colored shape on a textured noise background,
// mask exactly on the shape's pixels.
// ---------------------------------------------------------------------------

std::pair<Tensor<float>, std::vector<uint8_t>> generate_synthetic_sample(
    int class_id, const SyntheticParams& params, int h, int w, Rng& rng);

std::vector<TaskData> build_scenario(const ScenarioSpec& spec);

// Mean mask area fraction over a set of samples (the pointing-game chance level).
double mean_mask_fraction(const std::vector<Sample>& samples);

} // namespace salcl::data
