#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distillbev/distill.hpp"
#include "distillbev/network.hpp"
#include "distillbev/scene.hpp"

namespace distillbev {

enum class DistillMode { off, plain, full };

struct TrainConfig {
    std::size_t epochs = 30;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    bool cosine = true;
    std::uint64_t seed = 0;
    DistillMode distill = DistillMode::off;
    DistillConfig distill_cfg;
    bool inherit_head = true;
    double distill_weight = 1.0;  // multiplier on L_dist next to the detection loss
    bool temporal = false;
};

struct Dataset {
    GridSpec grid;
    std::vector<SceneSample> scenes;
};

struct SequenceDataset {
    GridSpec grid;
    std::vector<std::vector<SceneSample>> sequences;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double det_loss = 0.0;
    double l_dist = 0.0;
    double feature_mse_to_teacher = 0.0;
    double synthetic_ap = 0.0;
};

struct LayerMetrics {
    std::size_t step = 0;
    std::string layer_id;
    double l_feat = 0.0;
    double l_attn = 0.0;
};

struct StudentTrainResult {
    std::vector<EpochMetrics> metrics;
    std::vector<LayerMetrics> layer_metrics;
};

struct EvalMetrics {
    double synthetic_ap = 0.0;
    double feature_mse_to_teacher = 0.0;
    double det_mse = 0.0;
};

// Heatmap-MSE pre-training of the teacher. Returns the final-epoch mean loss.
double train_teacher(const Dataset& dataset, const TrainConfig& config, ToyNetwork& teacher);

// Student training; teacher is frozen (forward passes only). eval_set drives
// the per-epoch synthetic_ap / feature_mse columns.
StudentTrainResult train_student(const Dataset& train_set, const Dataset& eval_set,
                                 ToyNetwork& teacher, ToyNetwork& student,
                                 const TrainConfig& config);

// Temporal variant over two-frame (or longer) sequences: the previous frame's
// B1 feature is warped into the current frame and concatenated (students built
// with spec.temporal = true).
StudentTrainResult train_student_temporal(const SequenceDataset& train_set,
                                          ToyNetwork& teacher, ToyNetwork& student,
                                          const TrainConfig& config);

// Peak-extraction average precision plus feature/heatmap error metrics.
// teacher may be null, in which case feature_mse_to_teacher is reported as 0.
// feature_mse_to_teacher compares teacher pre-head features against the
// student's, passed through the pre-head adapter when one is given.
EvalMetrics evaluate(ToyNetwork& student, ToyNetwork* teacher, const Dataset& dataset,
                     const AdaptationModule* prehead = nullptr);

// One ranked detection for AP computation.
struct Detection {
    double score = 0.0;
    std::size_t scene = 0;
    std::uint32_t class_id = 0;
    long i = 0, j = 0;
};

// 3x3 local maxima above a small floor; plateau ties go to the first cell in
// row-major scan order so block-constant maps still yield one peak per blob.
std::vector<Detection> extract_peaks(const Heatmap& hm, std::size_t scene_index,
                                     double floor = 0.05);

// Greedy one-to-one matching of ranked detections to ground-truth centers
// within `radius` cells, averaged over classes that have ground truth.
double average_precision(std::vector<Detection> dets,
                         const std::vector<std::vector<Detection>>& gt_per_class,
                         double radius = 2.0);

// CSV serialization of the metrics histories (round-trippable doubles).
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);
void write_layer_csv(const std::string& path, const std::vector<LayerMetrics>& rows);
std::vector<EpochMetrics> read_metrics_csv(const std::string& path);

}  // namespace distillbev
