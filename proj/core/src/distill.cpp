#include "distillbev/distill.hpp"

#include <cmath>

namespace distillbev {

void DistillConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("distill config: tau must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("distill config: gamma must be in (0,1)");
    if (eta < 0.0) throw std::invalid_argument("distill config: eta must be >= 0");
    if (layers.empty()) throw std::invalid_argument("distill config: no layer pairs");
    for (const auto& l : layers) {
        // imitation at early layers is rejected, only H/B1/B2 are eligible
        if (l.teacher_layer == "B0" || l.student_layer == "B0")
            throw std::invalid_argument("distill config: early layer B0 not allowed");
        if (l.teacher_layer != "H" && l.teacher_layer != "B1" && l.teacher_layer != "B2")
            throw std::invalid_argument("distill config: unknown layer " + l.teacher_layer);
        if (l.include_fp && l.teacher_layer != "H")
            throw std::invalid_argument(
                "distill config: FP regions only allowed at the pre-head pair");
        if (!l.adapter) throw std::invalid_argument("distill config: missing adapter");
    }
}

namespace {

// Nearest-neighbor resample of a [K,H,W] heatmap to a new spatial size.
Heatmap resample_nearest(const Heatmap& hm, std::size_t h, std::size_t w) {
    if (hm.dim(1) == h && hm.dim(2) == w) return hm;
    const std::size_t k = hm.dim(0);
    Heatmap out({k, h, w});
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t si = i * hm.dim(1) / h;
                const std::size_t sj = j * hm.dim(2) / w;
                out.at(c, i, j) = hm.at(c, si, sj);
            }
    return out;
}

}  // namespace

std::vector<LayerContext> precompute_layer_contexts(
    const std::vector<FeatureMap>& teacher_feats, const SceneContext& scene,
    const DistillConfig& cfg) {
    cfg.validate();
    if (teacher_feats.size() != cfg.layers.size())
        throw std::invalid_argument("distill: teacher feature count != layer pairs");
    std::vector<LayerContext> out;
    out.reserve(cfg.layers.size());
    for (std::size_t n = 0; n < cfg.layers.size(); ++n) {
        const FeatureMap& ft = teacher_feats[n];
        const std::size_t h = ft.dim(1), w = ft.dim(2);
        const GridSpec grid_n = scene.grid.with_cells(static_cast<std::uint32_t>(w),
                                                      static_cast<std::uint32_t>(h));
        const OwnerGrid owners = rasterize_boxes(scene.boxes, grid_n);
        const Heatmap th = resample_nearest(scene.teacher_heatmap, h, w);
        std::vector<bool> fp(h * w, false);
        if (cfg.layers[n].include_fp) {
            const Heatmap gt = scene.gt_heatmap.dim(1) == h && scene.gt_heatmap.dim(2) == w
                                   ? scene.gt_heatmap
                                   : render_heatmap(scene.boxes, grid_n,
                                                    static_cast<std::uint32_t>(
                                                        scene.gt_heatmap.dim(0)));
            fp = compute_fp_cells(th, gt, cfg.gamma);
        }
        const RegionPartition part = decompose(owners, fp, th, cfg.gamma);
        const RegionMask mask = build_mask(part, cfg.eta, cfg.layers[n].include_fp);
        LayerContext ctx;
        ctx.m = mask.m;
        ctx.m_bar = mask.m_bar;
        ctx.s = compute_scaling(part, scene.boxes, grid_n);
        ctx.p_teacher = pool_abs_mean_fwd(ft);
        ctx.n_teacher = normalize_attention(ctx.p_teacher, cfg.tau);
        out.push_back(std::move(ctx));
    }
    return out;
}

Value feature_imitation_loss(Graph& g, const FeatureMap& f_t, Value f_s_adapted,
                             const Tensor& m, const Tensor& m_bar, const Tensor& s,
                             const Tensor& a, double alpha, double beta) {
    if (!g.value(f_s_adapted).same_shape(f_t))
        throw std::invalid_argument("feature_imitation_loss: feature shape mismatch");
    // both Eq. 7 terms share the squared residual, so fold the weights into
    // one per-cell grid: (alpha*m + beta*m_bar) * s * a
    Tensor w(m.shape());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = (alpha * m[i] + beta * m_bar[i]) * s[i] * a[i];
    return weighted_sq_diff_sum(g, f_s_adapted, f_t, w);
}

Value attention_imitation_loss(Graph& g, Value p_s, const Tensor& p_t) {
    return l1_diff_sum(g, p_s, p_t);
}

DistillResult total_distill_loss(GraphBinding& bind,
                                 const std::vector<FeatureMap>& teacher_feats,
                                 const std::vector<Value>& student_feats,
                                 const std::vector<LayerContext>& contexts,
                                 const DistillConfig& cfg, BnMode adapter_mode) {
    cfg.validate();
    Graph& g = bind.graph();
    if (teacher_feats.size() != cfg.layers.size() || student_feats.size() != cfg.layers.size() ||
        contexts.size() != cfg.layers.size())
        throw std::invalid_argument("distill: layer list size mismatch");

    DistillResult res;
    Value total{};
    bool first = true;
    for (std::size_t n = 0; n < cfg.layers.size(); ++n) {
        const LayerPairSpec& pair = cfg.layers[n];
        const FeatureMap& ft = teacher_feats[n];
        const Tensor& fs = g.value(student_feats[n]);
        const std::size_t up = pair.adapter->upsample_factor();
        if (fs.dim(1) * up != ft.dim(1) || fs.dim(2) * up != ft.dim(2))
            throw std::invalid_argument("distill: resolution ratio mismatch at layer " +
                                        pair.teacher_layer);
        if (pair.adapter->out_channels() != ft.dim(0))
            throw std::invalid_argument("distill: channel mismatch at layer " +
                                        pair.teacher_layer);

        Value adapted = pair.adapter->apply(bind, student_feats[n], adapter_mode);
        Value p_s = pool_abs_mean(g, adapted);

        // mask and scaling are constants; the combined attention is a graph
        // value so gradients also flow through the student's attention map
        const LayerContext& ctx = contexts[n];
        const double hw = static_cast<double>(ctx.m.size());
        Value n_s = scale(g, softmax_scaled(g, p_s, cfg.tau), hw);
        Value a = scale(g, add(g, g.constant(ctx.n_teacher), n_s), 0.5);

        Tensor wms(ctx.m.shape());
        for (std::size_t i = 0; i < wms.size(); ++i)
            wms[i] = (cfg.alpha * ctx.m[i] + cfg.beta * ctx.m_bar[i]) * ctx.s[i];

        Value resid = sub(g, g.constant(ft), adapted);
        Value l_feat = sum(g, mul_hw(g, mul_hw(g, mul(g, resid, resid), a), g.constant(wms)));
        Value l_attn = attention_imitation_loss(g, p_s, ctx.p_teacher);

        LayerPairOutput out;
        out.l_feat = g.value(l_feat)[0];
        out.l_attn = g.value(l_attn)[0];
        out.maps = WeightMaps{ctx.m, ctx.m_bar, ctx.s, g.value(a)};
        res.pairs.push_back(std::move(out));

        Value pair_total = add(g, l_feat, scale(g, l_attn, cfg.lambda));
        total = first ? pair_total : add(g, total, pair_total);
        first = false;
    }
    res.total = total;
    return res;
}

DistillResult total_distill_loss(GraphBinding& bind,
                                 const std::vector<FeatureMap>& teacher_feats,
                                 const std::vector<Value>& student_feats,
                                 const SceneContext& scene, const DistillConfig& cfg,
                                 BnMode adapter_mode) {
    const auto contexts = precompute_layer_contexts(teacher_feats, scene, cfg);
    return total_distill_loss(bind, teacher_feats, student_feats, contexts, cfg, adapter_mode);
}

}  // namespace distillbev
