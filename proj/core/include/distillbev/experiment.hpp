#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "distillbev/network.hpp"
#include "distillbev/scene.hpp"
#include "distillbev/train.hpp"

namespace distillbev {

// Full experiment description, loadable from a sectioned key-value text file.
// Parsing is strict: unknown sections or keys are rejected.
struct ExperimentConfig {
    SceneConfig scene;
    std::uint32_t train_scenes = 256;
    std::uint32_t eval_scenes = 64;

    // student network widths (the student runs at half resolution); the
    // pre-head width is shared with the teacher so the head is inheritable
    std::uint32_t c_b1 = 8, c_b2 = 12, c_h = 16;
    // teacher backbone widths; 0 means "same as the student". A wider teacher
    // backbone models the capacity gap between the LiDAR teacher and the
    // camera student: the teacher's pre-head features become richer than the
    // student can match everywhere, so where the imitation budget is spent
    // matters. The adaptation modules absorb the channel mismatch.
    std::uint32_t teacher_c_b1 = 0, teacher_c_b2 = 0;

    std::size_t epochs = 30;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    bool cosine = true;
    std::uint64_t seed = 0;
    DistillMode distill = DistillMode::full;
    bool inherit_head = true;
    double distill_weight = 1.0;
    bool temporal = false;

    double alpha = 6e-3;
    double beta = 4e-2;
    double lambda = 2.5e-3;
    double eta = 20.0;
    double tau = 0.5;
    double gamma = 0.1;
    std::string distill_layers = "B2,H";  // comma-separated teacher layer ids
    bool include_fp = true;               // applied at the pre-head pair only

    std::string output_dir = "out";

    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
    std::string serialize() const;

    TrainConfig make_train_config() const;
    DistillConfig make_distill_config() const;
    NetworkSpec teacher_spec() const;
    NetworkSpec student_spec() const;
};

// Generates `count` scenes with per-sample seeds derived from the base seed.
// Parallel across samples (DISTILLBEV_THREADS caps the worker count).
Dataset generate_dataset(const SceneConfig& config, std::uint64_t seed, std::uint32_t count);

// Builds the teacher/student pair and registers adapter parameters in the
// student store when distillation is enabled.
ToyNetwork make_teacher(const ExperimentConfig& cfg);
ToyNetwork make_student(const ExperimentConfig& cfg);

}  // namespace distillbev
