#include "distillbev/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace distillbev {

namespace {

constexpr std::uint64_t kShuffleStream = 7;

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, epoch, kShuffleStream);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

void check_finite_loss(double loss, const char* what) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(what) + ": loss is not finite, aborting");
}

Tensor upsample2_tensor(const Tensor& t) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j) out.at(ch, i, j) = t.at(ch, i / 2, j / 2);
    return out;
}

const AdaptationModule* prehead_adapter(const TrainConfig& config) {
    if (config.distill == DistillMode::off) return nullptr;
    for (const auto& pair : config.distill_cfg.layers)
        if (pair.adapter && pair.adapter->kind() == AdapterKind::prehead)
            return pair.adapter.get();
    return nullptr;
}

double feature_mse(const Tensor& teacher_h, const Tensor& student_h) {
    Tensor s = student_h;
    if (s.dim(1) * 2 == teacher_h.dim(1) && s.dim(2) * 2 == teacher_h.dim(2))
        s = upsample2_tensor(s);
    if (!s.same_shape(teacher_h))
        throw std::invalid_argument("feature_mse: incompatible pre-head shapes");
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = teacher_h[i] - s[i];
        acc += d * d;
    }
    return acc / static_cast<double>(s.size());
}

struct TeacherSceneCache {
    std::vector<Tensor> layer_feats;  // ordered like cfg.layers
    Tensor pre_head;
    Heatmap pred_heatmap;
    std::vector<LayerContext> contexts;  // empty when distillation is off
};

TeacherSceneCache cache_teacher(ToyNetwork& teacher, const SceneSample& scene,
                                const GridSpec& grid, const TrainConfig& cfg) {
    Graph g;
    auto lv = teacher.forward_infer(g, scene.teacher_input);
    TeacherSceneCache out;
    out.pre_head = g.value(lv.h);
    out.pred_heatmap = g.value(lv.heatmap);
    if (cfg.distill != DistillMode::off) {
        for (const auto& pair : cfg.distill_cfg.layers)
            out.layer_feats.push_back(g.value(teacher.layer_by_name(lv, pair.teacher_layer)));
        if (cfg.distill == DistillMode::full) {
            SceneContext ctx{scene.boxes, out.pred_heatmap, scene.gt_heatmap, grid};
            out.contexts = precompute_layer_contexts(out.layer_feats, ctx, cfg.distill_cfg);
        }
    }
    return out;
}

}  // namespace

std::vector<Detection> extract_peaks(const Heatmap& hm, std::size_t scene_index,
                                     double floor) {
    const std::size_t k = hm.dim(0), h = hm.dim(1), w = hm.dim(2);
    std::vector<Detection> out;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double v = hm.at(c, i, j);
                if (v <= floor) continue;
                bool peak = true;
                for (int di = -1; di <= 1 && peak; ++di)
                    for (int dj = -1; dj <= 1 && peak; ++dj) {
                        if (di == 0 && dj == 0) continue;
                        const long ii = static_cast<long>(i) + di;
                        const long jj = static_cast<long>(j) + dj;
                        if (ii < 0 || ii >= static_cast<long>(h) || jj < 0 ||
                            jj >= static_cast<long>(w))
                            continue;
                        const double nv = hm.at(c, ii, jj);
                        if (nv > v) peak = false;
                        // plateau tie-break: the first cell in scan order wins
                        if (nv == v && (di < 0 || (di == 0 && dj < 0))) peak = false;
                    }
                if (peak)
                    out.push_back({v, scene_index, static_cast<std::uint32_t>(c),
                                   static_cast<long>(i), static_cast<long>(j)});
            }
    return out;
}

double average_precision(std::vector<Detection> dets,
                         const std::vector<std::vector<Detection>>& gt_per_class,
                         double radius) {
    double ap_sum = 0.0;
    std::size_t classes_with_gt = 0;
    for (std::size_t cls = 0; cls < gt_per_class.size(); ++cls) {
        const auto& gts = gt_per_class[cls];
        if (gts.empty()) continue;
        ++classes_with_gt;

        std::vector<Detection> cdets;
        for (const auto& d : dets)
            if (d.class_id == cls) cdets.push_back(d);
        std::sort(cdets.begin(), cdets.end(), [](const Detection& a, const Detection& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.scene != b.scene) return a.scene < b.scene;
            if (a.i != b.i) return a.i < b.i;
            return a.j < b.j;
        });

        std::vector<bool> matched(gts.size(), false);
        double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
        const double n_gt = static_cast<double>(gts.size());
        for (const auto& d : cdets) {
            long best = -1;
            double best_d = radius;
            for (std::size_t gi = 0; gi < gts.size(); ++gi) {
                if (matched[gi] || gts[gi].scene != d.scene) continue;
                const double dist = std::hypot(static_cast<double>(gts[gi].i - d.i),
                                               static_cast<double>(gts[gi].j - d.j));
                if (dist <= best_d) {
                    best_d = dist;
                    best = static_cast<long>(gi);
                }
            }
            if (best >= 0) {
                matched[best] = true;
                tp += 1.0;
                const double recall = tp / n_gt;
                const double precision = tp / (tp + fp);
                ap += (recall - prev_recall) * precision;
                prev_recall = recall;
            } else {
                fp += 1.0;
            }
        }
        ap_sum += ap;
    }
    return classes_with_gt ? ap_sum / static_cast<double>(classes_with_gt) : 0.0;
}

EvalMetrics evaluate(ToyNetwork& student, ToyNetwork* teacher, const Dataset& dataset,
                     const AdaptationModule* prehead) {
    EvalMetrics out;
    std::vector<Detection> dets;
    const std::uint32_t k = student.spec().num_classes;
    std::vector<std::vector<Detection>> gts(k);
    double mse_acc = 0.0, fm_acc = 0.0;
    for (std::size_t si = 0; si < dataset.scenes.size(); ++si) {
        const SceneSample& scene = dataset.scenes[si];
        Graph g;
        GraphBinding bind(g, student.params());
        const Tensor zero_prev =
            student.spec().temporal
                ? Tensor({student.spec().c_b1, dataset.grid.cells_y / 2, dataset.grid.cells_x / 2})
                : Tensor();
        auto lv = student.forward(bind, scene.student_input, BnMode::infer,
                                  student.spec().temporal ? &zero_prev : nullptr);
        const Heatmap pred = g.value(lv.heatmap);
        auto scene_dets = extract_peaks(pred, si);
        dets.insert(dets.end(), scene_dets.begin(), scene_dets.end());
        for (const BevBox& b : scene.boxes) {
            const long j = static_cast<long>(
                std::floor((b.cx - dataset.grid.x_min) / dataset.grid.cell_size_x()));
            const long i = static_cast<long>(
                std::floor((b.cy - dataset.grid.y_min) / dataset.grid.cell_size_y()));
            gts[b.class_id].push_back({1.0, si, b.class_id, i, j});
        }
        double acc = 0.0;
        for (std::size_t x = 0; x < pred.size(); ++x) {
            const double d = pred[x] - scene.gt_heatmap[x];
            acc += d * d;
        }
        mse_acc += acc / static_cast<double>(pred.size());
        if (teacher) {
            Graph tg;
            auto tlv = teacher->forward_infer(tg, scene.teacher_input);
            Value sh = lv.h;
            if (prehead) sh = prehead->apply(bind, lv.h, BnMode::infer);
            fm_acc += feature_mse(tg.value(tlv.h), g.value(sh));
        }
    }
    const double n = static_cast<double>(dataset.scenes.size());
    out.det_mse = n > 0 ? mse_acc / n : 0.0;
    out.feature_mse_to_teacher = teacher && n > 0 ? fm_acc / n : 0.0;
    out.synthetic_ap = average_precision(std::move(dets), gts);
    return out;
}

double train_teacher(const Dataset& dataset, const TrainConfig& config, ToyNetwork& teacher) {
    if (dataset.scenes.empty()) throw std::invalid_argument("train_teacher: empty dataset");
    if (!(config.lr > 0.0)) throw std::invalid_argument("train_teacher: lr must be > 0");
    AdamW opt;
    opt.weight_decay = config.weight_decay;
    const std::size_t total_steps = config.epochs * dataset.scenes.size();
    std::size_t step = 0;
    double epoch_loss = 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        epoch_loss = 0.0;
        for (std::size_t idx : shuffled_order(dataset.scenes.size(), config.seed, epoch)) {
            const SceneSample& scene = dataset.scenes[idx];
            Graph g;
            GraphBinding bind(g, teacher.params());
            auto lv = teacher.forward(bind, scene.teacher_input, BnMode::train);
            Value loss = mse(g, lv.heatmap, scene.gt_heatmap);
            const double loss_val = g.value(loss)[0];
            check_finite_loss(loss_val, "train_teacher");
            epoch_loss += loss_val;
            g.backward(loss);
            const double lr = config.cosine ? cosine_lr(config.lr, step, total_steps) : config.lr;
            opt.step(teacher.params(), bind.gradients(), lr, step + 1);
            ++step;
        }
        epoch_loss /= static_cast<double>(dataset.scenes.size());
    }
    return epoch_loss;
}

StudentTrainResult train_student(const Dataset& train_set, const Dataset& eval_set,
                                 ToyNetwork& teacher, ToyNetwork& student,
                                 const TrainConfig& config) {
    if (train_set.scenes.empty()) throw std::invalid_argument("train_student: empty dataset");
    if (!(config.lr > 0.0)) throw std::invalid_argument("train_student: lr must be > 0");
    if (config.distill != DistillMode::off) config.distill_cfg.validate();

    if (config.inherit_head) inherit_head(student, teacher);

    // the teacher is frozen: its features are scene constants, computed once
    std::vector<TeacherSceneCache> cache;
    cache.reserve(train_set.scenes.size());
    for (const auto& scene : train_set.scenes)
        cache.push_back(cache_teacher(teacher, scene, train_set.grid, config));

    AdamW opt;
    opt.weight_decay = config.weight_decay;
    const std::size_t total_steps = config.epochs * train_set.scenes.size();
    std::size_t step = 0;
    StudentTrainResult res;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double det_acc = 0.0, dist_acc = 0.0;
        for (std::size_t idx : shuffled_order(train_set.scenes.size(), config.seed, epoch)) {
            const SceneSample& scene = train_set.scenes[idx];
            const TeacherSceneCache& tc = cache[idx];
            Graph g;
            GraphBinding bind(g, student.params());
            auto lv = student.forward(bind, scene.student_input, BnMode::train);
            Value det = mse(g, lv.heatmap, scene.gt_heatmap);
            Value total = det;
            double dist_val = 0.0;

            if (config.distill == DistillMode::full) {
                std::vector<Value> student_feats;
                for (const auto& pair : config.distill_cfg.layers)
                    student_feats.push_back(student.layer_by_name(lv, pair.student_layer));
                DistillResult dr =
                    total_distill_loss(bind, tc.layer_feats, student_feats, tc.contexts,
                                       config.distill_cfg, BnMode::train);
                dist_val = g.value(dr.total)[0];
                for (std::size_t n = 0; n < dr.pairs.size(); ++n)
                    res.layer_metrics.push_back({step, config.distill_cfg.layers[n].teacher_layer,
                                                 dr.pairs[n].l_feat, dr.pairs[n].l_attn});
                total = add(g, det, scale(g, dr.total, config.distill_weight));
            } else if (config.distill == DistillMode::plain) {
                // basic feature imitation: every component grid set to ones
                const DistillConfig& dc = config.distill_cfg;
                Value dist{};
                bool first = true;
                for (std::size_t n = 0; n < dc.layers.size(); ++n) {
                    Value feat = student.layer_by_name(lv, dc.layers[n].student_layer);
                    Value adapted = dc.layers[n].adapter->apply(bind, feat, BnMode::train);
                    const Tensor& ft = tc.layer_feats[n];
                    const Tensor ones =
                        Tensor::full({ft.dim(1), ft.dim(2)}, dc.alpha + dc.beta);
                    Value l = weighted_sq_diff_sum(g, adapted, ft, ones);
                    res.layer_metrics.push_back(
                        {step, dc.layers[n].teacher_layer, g.value(l)[0], 0.0});
                    dist = first ? l : add(g, dist, l);
                    first = false;
                }
                dist_val = g.value(dist)[0];
                total = add(g, det, scale(g, dist, config.distill_weight));
            }

            const double total_val = g.value(total)[0];
            check_finite_loss(total_val, "train_student");
            det_acc += g.value(det)[0];
            dist_acc += dist_val;
            g.backward(total);
            const double lr = config.cosine ? cosine_lr(config.lr, step, total_steps) : config.lr;
            opt.step(student.params(), bind.gradients(), lr, step + 1);
            ++step;
        }

        EvalMetrics ev = evaluate(student, &teacher, eval_set, prehead_adapter(config));
        EpochMetrics em;
        em.epoch = epoch;
        em.det_loss = det_acc / static_cast<double>(train_set.scenes.size());
        em.l_dist = dist_acc / static_cast<double>(train_set.scenes.size());
        em.feature_mse_to_teacher = ev.feature_mse_to_teacher;
        em.synthetic_ap = ev.synthetic_ap;
        res.metrics.push_back(em);
    }
    return res;
}

StudentTrainResult train_student_temporal(const SequenceDataset& train_set,
                                          ToyNetwork& teacher, ToyNetwork& student,
                                          const TrainConfig& config) {
    if (!student.spec().temporal)
        throw std::invalid_argument("train_student_temporal: student is not temporal");
    if (train_set.sequences.empty())
        throw std::invalid_argument("train_student_temporal: empty dataset");
    if (config.inherit_head) inherit_head(student, teacher);
    if (config.distill != DistillMode::off) config.distill_cfg.validate();

    const GridSpec half =
        train_set.grid.with_cells(train_set.grid.cells_x / 2, train_set.grid.cells_y / 2);
    AdamW opt;
    opt.weight_decay = config.weight_decay;
    std::size_t steps_per_epoch = 0;
    for (const auto& seq : train_set.sequences) steps_per_epoch += seq.size();
    const std::size_t total_steps = config.epochs * steps_per_epoch;
    std::size_t step = 0;
    StudentTrainResult res;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double det_acc = 0.0, dist_acc = 0.0;
        for (std::size_t sq : shuffled_order(train_set.sequences.size(), config.seed, epoch)) {
            const auto& seq = train_set.sequences[sq];
            Tensor prev_b1({student.spec().c_b1, half.cells_y, half.cells_x});
            for (std::size_t t = 0; t < seq.size(); ++t) {
                const SceneSample& scene = seq[t];
                Tensor warped = t == 0 ? prev_b1
                                       : warp_bev(prev_b1, seq[t - 1].ego_pose, scene.ego_pose,
                                                  half);
                Graph g;
                GraphBinding bind(g, student.params());
                auto lv = student.forward(bind, scene.student_input, BnMode::train, &warped);
                Value det = mse(g, lv.heatmap, scene.gt_heatmap);
                Value total = det;
                double dist_val = 0.0;
                if (config.distill == DistillMode::full) {
                    TeacherSceneCache tc = cache_teacher(teacher, scene, train_set.grid, config);
                    std::vector<Value> student_feats;
                    for (const auto& pair : config.distill_cfg.layers)
                        student_feats.push_back(student.layer_by_name(lv, pair.student_layer));
                    DistillResult dr =
                        total_distill_loss(bind, tc.layer_feats, student_feats, tc.contexts,
                                           config.distill_cfg, BnMode::train);
                    dist_val = g.value(dr.total)[0];
                    total = add(g, det, scale(g, dr.total, config.distill_weight));
                }
                const double total_val = g.value(total)[0];
                check_finite_loss(total_val, "train_student_temporal");
                det_acc += g.value(det)[0];
                dist_acc += dist_val;
                g.backward(total);
                const double lr =
                    config.cosine ? cosine_lr(config.lr, step, total_steps) : config.lr;
                opt.step(student.params(), bind.gradients(), lr, step + 1);
                ++step;
                // next frame sees this frame's features, forward-only
                prev_b1 = g.value(lv.b1);
            }
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.det_loss = det_acc / static_cast<double>(steps_per_epoch);
        em.l_dist = dist_acc / static_cast<double>(steps_per_epoch);
        res.metrics.push_back(em);
    }
    return res;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "epoch,det_loss,l_dist,feature_mse_to_teacher,synthetic_ap\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.det_loss,
                      r.l_dist, r.feature_mse_to_teacher, r.synthetic_ap);
        os << buf;
    }
}

void write_layer_csv(const std::string& path, const std::vector<LayerMetrics>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "step,layer_id,l_feat,l_attn\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", r.step, r.layer_id.c_str(),
                      r.l_feat, r.l_attn);
        os << buf;
    }
}

std::vector<EpochMetrics> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<EpochMetrics> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochMetrics m;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        m.epoch = static_cast<std::size_t>(std::stoull(field));
        std::getline(ss, field, ',');
        m.det_loss = std::stod(field);
        std::getline(ss, field, ',');
        m.l_dist = std::stod(field);
        std::getline(ss, field, ',');
        m.feature_mse_to_teacher = std::stod(field);
        std::getline(ss, field, ',');
        m.synthetic_ap = std::stod(field);
        out.push_back(m);
    }
    return out;
}

}  // namespace distillbev
