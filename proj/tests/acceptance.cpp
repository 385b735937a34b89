// Acceptance gate for the desk-scale benchmark: nine checks, one line each.
// Exits non-zero if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <vector>

#include "distillbev/distill.hpp"
#include "distillbev/experiment.hpp"
#include "distillbev/io.hpp"
#include "distillbev/region.hpp"
#include "distillbev/scaling.hpp"
#include "distillbev/scene.hpp"
#include "distillbev/train.hpp"

using namespace distillbev;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

RegionLabel brute_force_cell(const OwnerGrid& owners, const Heatmap& h_t,
                             const Heatmap& h_g, double gamma, std::size_t i,
                             std::size_t j) {
    double t = 0.0, g = 0.0;
    for (std::size_t c = 0; c < h_t.dim(0); ++c) {
        t = std::max(t, h_t.at(c, i, j));
        g = std::max(g, h_g.at(c, i, j));
    }
    if (owners.at(i, j) != kNoOwner) return t > gamma ? RegionLabel::TP : RegionLabel::FN;
    if (t > gamma && g < gamma) return RegionLabel::FP;
    return RegionLabel::TN;
}

SceneConfig varied_config(std::uint64_t seed) {
    SceneConfig cfg;
    // vary resolution (up to 64x64) and box load (up to 12)
    const std::uint32_t cells = 16u << (seed % 3);  // 16, 32, 64
    cfg.grid = cfg.grid.with_cells(cells, cells);
    cfg.box_count_min = 0;
    cfg.box_count_max = 4 + seed % 9;  // up to 12
    return cfg;
}

struct SceneUnderTest {
    SceneSample sample;
    Heatmap teacher_hm;
    OwnerGrid owners;
    RegionPartition partition;
    SceneConfig cfg;
};

SceneUnderTest build_scene(std::uint64_t seed) {
    SceneUnderTest s;
    s.cfg = varied_config(seed);
    s.sample = generate_scene(s.cfg, seed);
    s.teacher_hm = simulate_teacher_heatmap(s.sample.gt_heatmap, s.sample.boxes,
                                            s.cfg.grid, s.cfg.fp_rate, s.cfg.miss_rate,
                                            seed);
    s.owners = rasterize_boxes(s.sample.boxes, s.cfg.grid);
    s.partition = decompose(
        s.owners, compute_fp_cells(s.teacher_hm, s.sample.gt_heatmap, 0.1), s.teacher_hm,
        0.1);
    return s;
}

void criterion_1() {
    const auto t0 = Clock::now();
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 100 && ok; ++seed) {
        SceneUnderTest s = build_scene(seed);
        for (std::size_t i = 0; i < s.partition.h && ok; ++i)
            for (std::size_t j = 0; j < s.partition.w && ok; ++j)
                if (s.partition.at(i, j) !=
                    brute_force_cell(s.owners, s.teacher_hm, s.sample.gt_heatmap, 0.1, i, j))
                    ok = false;
    }
    const double dt = seconds_since(t0);
    ok = ok && dt < 10.0;
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "region partition equals brute force on 100 scenes (%.2f s)", dt);
    report(1, ok, buf);
}

void criterion_2() {
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 50 && ok; ++seed) {
        SceneConfig cfg = varied_config(seed);
        SceneSample sc = generate_scene(cfg, seed);
        const auto fp = compute_fp_cells(sc.gt_heatmap, sc.gt_heatmap, 0.1);
        if (std::count(fp.begin(), fp.end(), true) != 0) ok = false;
    }
    report(2, ok, "teacher == GT yields an empty FP set on 50 scenes");
}

void criterion_3() {
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 100 && ok; ++seed) {
        SceneUnderTest s = build_scene(seed);
        const Tensor sc = compute_scaling(s.partition, s.sample.boxes, s.cfg.grid);
        double fp_sum = 0.0, tn_sum = 0.0;
        std::size_t n_fp = 0, n_tn = 0;
        std::vector<double> per_object(s.sample.boxes.size(), 0.0);
        std::vector<std::size_t> cells(s.sample.boxes.size(), 0);
        for (std::size_t i = 0; i < s.partition.label.size(); ++i) {
            switch (s.partition.label[i]) {
                case RegionLabel::FP: fp_sum += sc[i]; ++n_fp; break;
                case RegionLabel::TN: tn_sum += sc[i]; ++n_tn; break;
                default:
                    per_object[s.partition.owner[i]] += sc[i];
                    ++cells[s.partition.owner[i]];
            }
        }
        if (n_fp && std::abs(fp_sum - 1.0) > 1e-9) ok = false;
        if (n_tn && std::abs(tn_sum - 1.0) > 1e-9) ok = false;
        for (std::size_t k = 0; k < s.sample.boxes.size() && ok; ++k) {
            if (!cells[k]) continue;
            const double hk =
                std::max(1.0, s.sample.boxes[k].length / s.cfg.grid.cell_size_y());
            const double wk =
                std::max(1.0, s.sample.boxes[k].width / s.cfg.grid.cell_size_x());
            if (std::abs(per_object[k] - cells[k] / std::sqrt(hk * wk)) > 1e-9) ok = false;
        }
    }
    report(3, ok, "scaling budgets (FP, TN, per-object) hold to 1e-9 on 100 scenes");
}

void criterion_4() {
    bool ok = true;
    Rng rng(404);
    for (int trial = 0; trial < 20 && ok; ++trial) {
        Tensor p({12, 12});
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(0.0, 4.0);

        for (double tau : {0.1, 0.5, 5.0}) {
            Tensor n = normalize_attention(p, tau);
            double total = 0.0;
            for (std::size_t i = 0; i < n.size(); ++i) total += n[i];
            if (std::abs(total - 144.0) > 1e-6) ok = false;
        }

        Tensor flat = normalize_attention(p, 1e6);
        for (std::size_t i = 0; i < flat.size(); ++i)
            if (std::abs(flat[i] - 1.0) > 1e-3) ok = false;

        double prev = -1.0;
        for (double tau : {0.1, 0.5, 5.0}) {
            Tensor n = normalize_attention(p, tau);
            double e = 0.0;
            for (std::size_t i = 0; i < n.size(); ++i) {
                const double q = n[i] / 144.0;
                if (q > 0.0) e -= q * std::log(q);
            }
            if (e <= prev) ok = false;
            prev = e;
        }
    }
    report(4, ok, "attention sums to H*W, flattens at tau=1e6, entropy rises with tau");
}

void criterion_5() {
    const auto t0 = Clock::now();
    SceneContext ctx;
    ctx.grid = GridSpec{-8.0, 8.0, -8.0, 8.0, 8, 8};
    ctx.boxes = {BevBox{0.0, 0.0, 4.0, 3.0, 0.4, 0}};
    ctx.gt_heatmap = render_heatmap(ctx.boxes, ctx.grid, 1);
    ctx.teacher_heatmap = ctx.gt_heatmap;

    ParamStore store;
    Rng init(505);
    auto ad_b2 =
        std::make_shared<AdaptationModule>(AdapterKind::intermediate, 1, 2, 2, "adapt.b2");
    auto ad_h = std::make_shared<AdaptationModule>(AdapterKind::prehead, 1, 4, 4, "adapt.h");
    ad_b2->init_params(store, init);
    ad_h->init_params(store, init);
    DistillConfig cfg;
    cfg.layers.push_back({"B2", "B2", ad_b2, false});
    cfg.layers.push_back({"H", "H", ad_h, true});

    Rng rng(506);
    std::vector<FeatureMap> f_t(2);
    f_t[0] = Tensor({2, 4, 4});
    f_t[1] = Tensor({4, 8, 8});
    for (Tensor& t : f_t)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    Tensor s0({2, 4, 4}), s1({4, 8, 8});
    for (std::size_t i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < s1.size(); ++i) s1[i] = rng.uniform(-1.0, 1.0);

    // part 1: gradient w.r.t. the student features
    const double feat_err = grad_check(
        [&](Graph& g, std::vector<Value>& in) {
            GraphBinding bind(g, store);
            return total_distill_loss(bind, f_t, {in[0], in[1]}, ctx, cfg).total;
        },
        {s0, s1}, 1e-5);

    // part 2: gradient w.r.t. every trainable adaptation parameter, by
    // central differences on the stored values
    auto loss_at = [&]() {
        Graph g;
        GraphBinding bind(g, store);
        return g.value(
            total_distill_loss(bind, f_t, {g.constant(s0), g.constant(s1)}, ctx, cfg)
                .total)[0];
    };
    std::map<std::string, Tensor> analytic;
    {
        Graph g;
        GraphBinding bind(g, store);
        DistillResult res =
            total_distill_loss(bind, f_t, {g.constant(s0), g.constant(s1)}, ctx, cfg);
        g.backward(res.total);
        analytic = bind.gradients();
    }
    double param_err = 0.0;
    const double h = 1e-5;
    for (Param& p : store.all()) {
        if (!p.trainable) continue;
        const Tensor& grad = analytic.at(p.name);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + h;
            const double up = loss_at();
            p.value[i] = orig - h;
            const double down = loss_at();
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
            param_err = std::max(param_err, std::abs(numeric - grad[i]) / denom);
        }
    }

    const double err = std::max(feat_err, param_err);
    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "end-to-end distill gradient max rel err %.2e (limit 1e-5, %.2f s)", err,
                  dt);
    report(5, err <= 1e-5 && dt < 30.0, buf);
}

void criterion_6() {
    SceneContext ctx;
    ctx.grid = GridSpec{-8.0, 8.0, -8.0, 8.0, 8, 8};
    ctx.boxes = {BevBox{1.0, -1.0, 4.0, 2.0, 0.2, 0}};
    ctx.gt_heatmap = render_heatmap(ctx.boxes, ctx.grid, 1);
    ctx.teacher_heatmap = ctx.gt_heatmap;

    ParamStore store;
    auto mod = std::make_shared<AdaptationModule>(AdapterKind::prehead, 1, 3, 3, "adapt.id");
    Rng init(606);
    mod->init_params(store, init);
    for (std::size_t b = 0; b < mod->block_count(); ++b) {
        const std::string base = "adapt.id.block" + std::to_string(b);
        Tensor& w = store.get(base + ".conv.w").value;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
        for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
        store.get(base + ".conv.b").value = Tensor({3});
        store.get(base + ".bn.gamma").value = Tensor::full({3}, 1.0);
        store.get(base + ".bn.beta").value = Tensor({3});
        store.get(base + ".bn.running_mean").value = Tensor({3});
        store.get(base + ".bn.running_var").value = Tensor::full({3}, 1.0);
    }
    DistillConfig cfg;
    cfg.layers.push_back({"H", "H", mod, true});

    Rng rng(607);
    Tensor f_s({3, 8, 8});
    for (std::size_t i = 0; i < f_s.size(); ++i) f_s[i] = rng.uniform(0.1, 1.0);
    // teacher feature := exact adapter image of the student feature
    Tensor f_t;
    {
        Graph g0;
        GraphBinding b0(g0, store);
        f_t = g0.value(mod->apply(b0, g0.constant(f_s), BnMode::infer));
    }
    Graph g;
    GraphBinding bind(g, store);
    DistillResult res = total_distill_loss(bind, {f_t}, {g.constant(f_s)}, ctx, cfg);
    const bool ok = g.value(res.total)[0] == 0.0 && res.pairs[0].l_feat == 0.0 &&
                    res.pairs[0].l_attn == 0.0;
    report(6, ok, "identity-mapped student copies give exactly zero loss");
}

struct RunOutcome {
    double feature_mse = 0.0;
    double ap = 0.0;
};

RunOutcome run_benchmark(DistillMode mode, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.distill = mode;
    Dataset all = generate_dataset(cfg.scene, seed, cfg.train_scenes + cfg.eval_scenes);
    Dataset train{all.grid, {}}, eval{all.grid, {}};
    for (std::size_t i = 0; i < all.scenes.size(); ++i)
        (i < cfg.train_scenes ? train : eval).scenes.push_back(std::move(all.scenes[i]));

    static std::map<std::uint64_t, ParamStore> teacher_cache;  // reuse across modes
    ToyNetwork teacher = make_teacher(cfg);
    auto it = teacher_cache.find(seed);
    if (it == teacher_cache.end()) {
        TrainConfig ttc = cfg.make_train_config();
        ttc.distill = DistillMode::off;
        train_teacher(train, ttc, teacher);
        teacher_cache.emplace(seed, teacher.params());
    } else {
        for (Param& p : teacher.params().all()) p.value = it->second.get(p.name).value;
    }

    ToyNetwork student = make_student(cfg);
    StudentTrainResult res =
        train_student(train, eval, teacher, student, cfg.make_train_config());
    const EpochMetrics& last = res.metrics.back();
    return {last.feature_mse_to_teacher, last.synthetic_ap};
}

void criterion_7() {
    const auto t0 = Clock::now();
    double mse[3] = {0, 0, 0}, ap[3] = {0, 0, 0};  // off, plain, full
    const DistillMode modes[3] = {DistillMode::off, DistillMode::plain, DistillMode::full};
    for (std::uint64_t seed = 0; seed < 3; ++seed)
        for (int m = 0; m < 3; ++m) {
            RunOutcome r = run_benchmark(modes[m], seed);
            mse[m] += r.feature_mse / 3.0;
            ap[m] += r.ap / 3.0;
        }
    const double dt = seconds_since(t0);
    const bool ok = mse[2] < mse[0] && mse[2] < mse[1] && ap[2] >= ap[1] && dt <= 900.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "feature MSE off/plain/full = %.4f/%.4f/%.4f, AP = %.4f/%.4f/%.4f "
                  "(%.1f min)",
                  mse[0], mse[1], mse[2], ap[0], ap[1], ap[2], dt / 60.0);
    report(7, ok, buf);
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

void criterion_8() {
    ExperimentConfig cfg;
    cfg.train_scenes = 12;
    cfg.eval_scenes = 4;
    cfg.epochs = 3;
    cfg.seed = 21;

    const fs::path root = fs::temp_directory_path() / "dbev_acceptance_det";
    fs::remove_all(root);
    bool ok = true;
    std::vector<std::vector<char>> artifacts[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        fs::create_directories(dir);
        Dataset all =
            generate_dataset(cfg.scene, cfg.seed, cfg.train_scenes + cfg.eval_scenes);
        std::vector<std::string> files;
        for (std::uint32_t i = 0; i < all.scenes.size(); ++i) {
            char name[16];
            std::snprintf(name, sizeof name, "%05u.dbs1", i);
            save_scene(dir / name, all.scenes[i], all.grid);
            files.push_back(name);
        }
        write_manifest(dir, files, cfg.serialize(), cfg.seed);

        Dataset train{all.grid, {}}, eval{all.grid, {}};
        for (std::size_t i = 0; i < all.scenes.size(); ++i)
            (i < cfg.train_scenes ? train : eval).scenes.push_back(std::move(all.scenes[i]));
        ToyNetwork teacher = make_teacher(cfg);
        TrainConfig ttc = cfg.make_train_config();
        ttc.distill = DistillMode::off;
        train_teacher(train, ttc, teacher);
        save_checkpoint(dir / "teacher.dbw1", teacher.params());

        ToyNetwork student = make_student(cfg);
        StudentTrainResult res =
            train_student(train, eval, teacher, student, cfg.make_train_config());
        save_checkpoint(dir / "student.dbw1", student.params());
        write_metrics_csv((dir / "metrics.csv").string(), res.metrics);

        for (const std::string& f : files) artifacts[run].push_back(slurp(dir / f));
        artifacts[run].push_back(slurp(dir / "teacher.dbw1"));
        artifacts[run].push_back(slurp(dir / "student.dbw1"));
        artifacts[run].push_back(slurp(dir / "metrics.csv"));
    }
    ok = artifacts[0] == artifacts[1];
    fs::remove_all(root);
    report(8, ok, "dataset, checkpoints and metrics CSV are byte-identical across reruns");
}

void criterion_9() {
    SceneConfig cfg;  // the default benchmark generator
    double total_fraction = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SceneSample sc = generate_scene(cfg, seed);
        Heatmap ht = simulate_teacher_heatmap(sc.gt_heatmap, sc.boxes, cfg.grid,
                                              cfg.fp_rate, cfg.miss_rate, seed);
        OwnerGrid owners = rasterize_boxes(sc.boxes, cfg.grid);
        RegionPartition p =
            decompose(owners, compute_fp_cells(ht, sc.gt_heatmap, 0.1), ht, 0.1);
        std::size_t non_tn = 0;
        for (RegionLabel l : p.label)
            if (l != RegionLabel::TN) ++non_tn;
        total_fraction += static_cast<double>(non_tn) / p.label.size();
    }
    const double mean = total_fraction / 100.0;
    char buf[96];
    std::snprintf(buf, sizeof buf, "mean non-TN cell fraction %.3f (limit 0.30)", mean);
    report(9, mean < 0.30, buf);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    if (g_failures) {
        std::printf("%d criteria FAILED\n", g_failures);
        return 1;
    }
    std::printf("all 9 criteria passed\n");
    return 0;
}
