#pragma once

#include <memory>
#include <string>
#include <vector>

#include "distillbev/attention.hpp"
#include "distillbev/autodiff.hpp"
#include "distillbev/bev_geometry.hpp"
#include "distillbev/region.hpp"
#include "distillbev/scaling.hpp"

namespace distillbev {

// One teacher/student layer pair selected for distillation. Layer ids use the
// encoder naming H (pre-head), B1, B2 (earlier); B0 is rejected outright.
struct LayerPairSpec {
    std::string teacher_layer;
    std::string student_layer;
    std::shared_ptr<AdaptationModule> adapter;
    bool include_fp = false;
};

struct DistillConfig {
    double alpha = 6e-3;
    double beta = 4e-2;
    double lambda = 2.5e-3;
    double eta = 20.0;
    double tau = 0.5;
    double gamma = 0.1;
    std::vector<LayerPairSpec> layers;

    void validate() const;
};

// Everything the loss needs about one scene, independent of the networks.
struct SceneContext {
    std::vector<BevBox> boxes;
    Heatmap teacher_heatmap;  // teacher's predicted heatmap for FP mining
    Heatmap gt_heatmap;
    GridSpec grid;
};

// Mask/scaling/attention grids aligned to one layer's resolution.
struct WeightMaps {
    Tensor m, m_bar, s, a;
};

struct LayerPairOutput {
    double l_feat = 0.0;
    double l_attn = 0.0;
    WeightMaps maps;
};

// Scene-dependent constants for one layer pair, reusable across training
// steps because the teacher is frozen.
struct LayerContext {
    Tensor m, m_bar, s;  // [H,W] at the layer's resolution
    Tensor n_teacher;    // normalized teacher attention
    Tensor p_teacher;    // un-normalized teacher attention (Eq. 8 target)
};

// Recomputes masks and scaling at each layer's resolution by re-rasterizing
// the scene's boxes, and evaluates teacher-side attention.
std::vector<LayerContext> precompute_layer_contexts(
    const std::vector<FeatureMap>& teacher_feats, const SceneContext& scene,
    const DistillConfig& cfg);

// Eq. 7 with constant weight grids; gradient reaches f_s_adapted only.
Value feature_imitation_loss(Graph& g, const FeatureMap& f_t, Value f_s_adapted,
                             const Tensor& m, const Tensor& m_bar, const Tensor& s,
                             const Tensor& a, double alpha, double beta);

// Eq. 8: L1 between un-normalized attention maps.
Value attention_imitation_loss(Graph& g, Value p_s, const Tensor& p_t);

struct DistillResult {
    Value total;
    std::vector<LayerPairOutput> pairs;
};

// Eq. 9: per configured pair, adapt the student feature, build the weight
// maps, and sum L_feat + lambda * L_attn. Mask and scaling grids are
// constants; gradients flow through the adapted feature and the student side
// of the attention weights. `contexts` must come from
// precompute_layer_contexts with the same scene and config.
DistillResult total_distill_loss(GraphBinding& bind,
                                 const std::vector<FeatureMap>& teacher_feats,
                                 const std::vector<Value>& student_feats,
                                 const std::vector<LayerContext>& contexts,
                                 const DistillConfig& cfg, BnMode adapter_mode);

// Convenience overload computing the contexts internally.
DistillResult total_distill_loss(GraphBinding& bind,
                                 const std::vector<FeatureMap>& teacher_feats,
                                 const std::vector<Value>& student_feats,
                                 const SceneContext& scene, const DistillConfig& cfg,
                                 BnMode adapter_mode = BnMode::infer);

}  // namespace distillbev
