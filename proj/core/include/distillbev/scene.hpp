#pragma once

#include <cstdint>
#include <vector>

#include "distillbev/bev_geometry.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

// Per-class box size range in meters.
struct ClassSizeSpec {
    double length_min = 1.0, length_max = 1.0;
    double width_min = 1.0, width_max = 1.0;
};

struct SceneConfig {
    GridSpec grid{-12.0, 12.0, -12.0, 12.0, 24, 24};
    std::uint32_t num_classes = 2;
    std::uint32_t box_count_min = 4;
    std::uint32_t box_count_max = 14;
    // default mix: one large vehicle-like class, one small pedestrian-like
    std::vector<ClassSizeSpec> class_sizes{{5.0, 10.0, 2.2, 3.4}, {1.0, 2.0, 1.0, 2.0}};
    double fp_rate = 1.0;    // expected injected teacher false-positive blobs per scene
    double miss_rate = 0.1;  // probability a ground-truth object is dropped by the teacher
    double clutter_rate = 0.30;   // background point probability per cell
    // fraction of clutter points visible in the student view: LiDAR picks up
    // low-reflectivity background returns that camera depth lifting misses,
    // so most background structure is teacher-only
    double clutter_visibility = 0.2;
    // expected unannotated object-like point clusters per cell; they draw
    // teacher false positives, giving the FP-mining regions real content
    double distractor_rate = 0.010;
    double blur_strength = 1.0;   // student input smoothing (box blur passes)
    double depth_noise = 1.5;     // max radial displacement in cells at grid edge
    std::uint32_t frames = 1;
    double ego_speed_min = 0.0;  // meters per frame
    double ego_speed_max = 2.0;

    void validate() const;
};

struct SceneSample {
    std::vector<BevBox> boxes;
    FeatureMap teacher_input;  // [2,H,W]: point density, occupancy
    FeatureMap student_input;  // [2,H,W]: blurred, depth-noised rendering
    Heatmap gt_heatmap;        // [K,H,W]
    EgoPose ego_pose;
    std::uint64_t seed = 0;
};

// Deterministic given (config, seed): identical bytes on every platform.
SceneSample generate_scene(const SceneConfig& config, std::uint64_t seed);

// One static world observed over config.frames poses; boxes are re-expressed
// in each frame's ego coordinates.
std::vector<SceneSample> generate_sequence(const SceneConfig& config, std::uint64_t seed);

// Synthetic teacher heatmap: drops each object's Gaussian with probability
// miss_rate and injects spurious blobs at box-free locations at Poisson rate
// fp_rate per scene.
Heatmap simulate_teacher_heatmap(const Heatmap& gt, const std::vector<BevBox>& boxes,
                                 const GridSpec& grid, double fp_rate, double miss_rate,
                                 std::uint64_t seed);

}  // namespace distillbev
