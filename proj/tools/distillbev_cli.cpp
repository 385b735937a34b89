// Command-line front end: dataset generation, teacher/student training,
// evaluation, mask inspection, and learning-curve plots.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "distillbev/attention.hpp"
#include "distillbev/bev_geometry.hpp"
#include "distillbev/experiment.hpp"
#include "distillbev/io.hpp"
#include "distillbev/region.hpp"
#include "distillbev/scaling.hpp"

namespace fs = std::filesystem;
using namespace distillbev;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

ExperimentConfig load_config(const std::string& path, std::uint64_t* seed_override) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

std::string scene_filename(std::uint32_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05u.dbs1", index);
    return buf;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    bool first = true;
    for (const std::string& f : read_manifest(dir)) {
        GridSpec grid;
        ds.scenes.push_back(load_scene(dir / f, grid));
        if (first) {
            ds.grid = grid;
            first = false;
        }
    }
    if (ds.scenes.empty()) throw std::runtime_error("dataset is empty: " + dir.string());
    return ds;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::uint64_t* seed_override) {
    ExperimentConfig cfg = load_config(config_path, seed_override);
    const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) / "data" : fs::path(out_dir);
    fs::create_directories(dir);
    const Dataset ds = generate_dataset(cfg.scene, cfg.seed, cfg.train_scenes + cfg.eval_scenes);
    std::vector<std::string> files;
    for (std::uint32_t i = 0; i < ds.scenes.size(); ++i) {
        const std::string name = scene_filename(i);
        save_scene(dir / name, ds.scenes[i], ds.grid);
        files.push_back(name);
    }
    write_manifest(dir, files, cfg.serialize(), cfg.seed);
    std::cout << "wrote " << files.size() << " scenes to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_train_teacher(const std::string& config_path, const std::string& data_dir,
                      const std::string& out_path, std::uint64_t* seed_override) {
    ExperimentConfig cfg = load_config(config_path, seed_override);
    Dataset all = data_dir.empty()
                      ? generate_dataset(cfg.scene, cfg.seed, cfg.train_scenes)
                      : load_dataset(data_dir);
    if (all.scenes.size() > cfg.train_scenes) all.scenes.resize(cfg.train_scenes);

    ToyNetwork teacher = make_teacher(cfg);
    TrainConfig tc = cfg.make_train_config();
    tc.distill = DistillMode::off;
    const double final_loss = train_teacher(all, tc, teacher);

    const fs::path out = out_path.empty() ? fs::path(cfg.output_dir) / "teacher.dbw1"
                                          : fs::path(out_path);
    fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    save_checkpoint(out, teacher.params());
    std::cout << "teacher final loss " << final_loss << ", checkpoint " << out.string() << "\n";
    return kExitOk;
}

int cmd_distill(const std::string& config_path, const std::string& data_dir,
                const std::string& teacher_path, std::uint64_t* seed_override) {
    ExperimentConfig cfg = load_config(config_path, seed_override);
    Dataset all = data_dir.empty()
                      ? generate_dataset(cfg.scene, cfg.seed, cfg.train_scenes + cfg.eval_scenes)
                      : load_dataset(data_dir);
    Dataset train_set{all.grid, {}}, eval_set{all.grid, {}};
    for (std::size_t i = 0; i < all.scenes.size(); ++i)
        (i < cfg.train_scenes ? train_set : eval_set).scenes.push_back(std::move(all.scenes[i]));
    if (eval_set.scenes.empty()) eval_set = train_set;

    ToyNetwork teacher = make_teacher(cfg);
    const fs::path tpath = teacher_path.empty() ? fs::path(cfg.output_dir) / "teacher.dbw1"
                                                : fs::path(teacher_path);
    load_checkpoint(tpath, teacher.params());

    ToyNetwork student = make_student(cfg);
    const TrainConfig tc = cfg.make_train_config();
    const StudentTrainResult res = train_student(train_set, eval_set, teacher, student, tc);

    fs::create_directories(cfg.output_dir);
    save_checkpoint(fs::path(cfg.output_dir) / "student.dbw1", student.params());
    write_metrics_csv((fs::path(cfg.output_dir) / "metrics.csv").string(), res.metrics);
    write_layer_csv((fs::path(cfg.output_dir) / "layer_losses.csv").string(),
                    res.layer_metrics);
    const EpochMetrics& last = res.metrics.back();
    std::cout << "student trained: det_loss " << last.det_loss << ", l_dist " << last.l_dist
              << ", feature_mse " << last.feature_mse_to_teacher << ", ap "
              << last.synthetic_ap << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& data_dir,
             const std::string& checkpoint, const std::string& teacher_path) {
    ExperimentConfig cfg = load_config(config_path, nullptr);
    const Dataset ds = load_dataset(data_dir);
    ToyNetwork student = make_student(cfg);
    load_checkpoint(checkpoint, student.params());
    ToyNetwork teacher = make_teacher(cfg);
    ToyNetwork* teacher_ptr = nullptr;
    if (!teacher_path.empty()) {
        load_checkpoint(teacher_path, teacher.params());
        teacher_ptr = &teacher;
    }
    DistillConfig dc;
    const AdaptationModule* prehead = nullptr;
    if (cfg.distill != DistillMode::off) {
        dc = cfg.make_distill_config();
        for (const auto& pair : dc.layers)
            if (pair.adapter && pair.adapter->kind() == AdapterKind::prehead)
                prehead = pair.adapter.get();
    }
    const EvalMetrics m = evaluate(student, teacher_ptr, ds, prehead);
    std::printf("synthetic_ap = %.6f\n", m.synthetic_ap);
    std::printf("feature_mse_to_teacher = %.6g\n", m.feature_mse_to_teacher);
    std::printf("det_mse = %.6g\n", m.det_mse);
    return kExitOk;
}

int cmd_masks(const std::string& config_path, const std::string& sample_path,
              const std::string& teacher_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_config(config_path, nullptr);
    GridSpec grid;
    const SceneSample scene = load_scene(sample_path, grid);
    const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) / "masks" : fs::path(out_dir);
    fs::create_directories(dir);

    // teacher heatmap: trained checkpoint if given, else the simulated one
    ToyNetwork teacher = make_teacher(cfg);
    Heatmap teacher_hm;
    Tensor teacher_feat;
    if (!teacher_path.empty()) {
        load_checkpoint(teacher_path, teacher.params());
        Graph g;
        auto lv = teacher.forward_infer(g, scene.teacher_input);
        teacher_hm = g.value(lv.heatmap);
        teacher_feat = g.value(lv.h);
    } else {
        teacher_hm = simulate_teacher_heatmap(scene.gt_heatmap, scene.boxes, grid,
                                              cfg.scene.fp_rate, cfg.scene.miss_rate, scene.seed);
        teacher_feat = scene.teacher_input;
    }

    const OwnerGrid owners = rasterize_boxes(scene.boxes, grid);
    const auto fp = compute_fp_cells(teacher_hm, scene.gt_heatmap, cfg.gamma);
    const RegionPartition part = decompose(owners, fp, teacher_hm, cfg.gamma);
    const RegionMask mask = build_mask(part, cfg.eta, cfg.include_fp);
    const Tensor s = compute_scaling(part, scene.boxes, grid);

    const Tensor p_t = pool_abs_mean_fwd(teacher_feat);
    const Tensor n_t = normalize_attention(p_t, cfg.tau);
    const Tensor p_s = pool_abs_mean_fwd(scene.student_input);
    const Tensor n_s = normalize_attention(p_s, cfg.tau);
    const Tensor a = combine_attention(n_t, n_s);

    std::vector<std::uint8_t> labels(part.label.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::uint8_t>(part.label[i]);
    write_png_labels(dir / "partition.png", part.h, part.w, labels);
    Tensor label_grid({part.h, part.w});
    for (std::size_t i = 0; i < labels.size(); ++i) label_grid[i] = labels[i];
    write_raw_grid(dir / "partition.f64", label_grid);

    const std::pair<const char*, const Tensor*> grids[] = {
        {"mask_m", &mask.m},         {"scaling_s", &s},
        {"attention_teacher", &n_t}, {"attention_student", &n_s},
        {"attention_a", &a},
    };
    for (const auto& [name, t] : grids) {
        double mx = 1e-12;
        for (std::size_t i = 0; i < t->size(); ++i) mx = std::max(mx, (*t)[i]);
        write_png_gray(dir / (std::string(name) + ".png"), *t, 0.0, mx);
        write_raw_grid(dir / (std::string(name) + ".f64"), *t);
    }
    std::cout << "wrote 6 PNGs and 6 raw arrays to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::vector<std::string>& labels,
             const std::string& out_path) {
    std::vector<PlotSeries> mse_series, ap_series;
    for (std::size_t i = 0; i < csvs.size(); ++i) {
        const auto rows = read_metrics_csv(csvs[i]);
        PlotSeries mse, ap;
        mse.label = i < labels.size() ? labels[i] : "run " + std::to_string(i);
        ap.label = mse.label;
        for (const auto& r : rows) {
            mse.x.push_back(static_cast<double>(r.epoch));
            mse.y.push_back(r.feature_mse_to_teacher);
            ap.x.push_back(static_cast<double>(r.epoch));
            ap.y.push_back(r.synthetic_ap);
        }
        mse_series.push_back(std::move(mse));
        ap_series.push_back(std::move(ap));
    }
    const fs::path base(out_path);
    fs::create_directories(base.parent_path().empty() ? fs::path(".") : base.parent_path());
    const fs::path mse_path = base.parent_path() / (base.stem().string() + "_feature_mse.svg");
    const fs::path ap_path = base.parent_path() / (base.stem().string() + "_synthetic_ap.svg");
    write_svg_plot(mse_path, "feature MSE to teacher", mse_series);
    write_svg_plot(ap_path, "synthetic AP", ap_series);
    std::cout << "wrote " << mse_path.string() << " and " << ap_path.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DistillBEV desk-scale benchmark"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, teacher_path, checkpoint, sample_path;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "Override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    auto* gen = app.add_subcommand("gen", "Generate a DBS1 dataset directory");
    gen->add_option("--config", config_path, "Experiment config file");
    gen->add_option("--out", out_dir, "Output dataset directory");
    add_seed(gen);

    auto* tt = app.add_subcommand("train-teacher", "Pre-train the teacher network");
    tt->add_option("--config", config_path, "Experiment config file");
    tt->add_option("--data", data_dir, "Dataset directory (default: regenerate)");
    tt->add_option("--out", out_dir, "Teacher checkpoint path");
    add_seed(tt);

    auto* di = app.add_subcommand("distill", "Train the student (distill per config)");
    di->add_option("--config", config_path, "Experiment config file");
    di->add_option("--data", data_dir, "Dataset directory (default: regenerate)");
    di->add_option("--teacher", teacher_path, "Teacher checkpoint (default: <out>/teacher.dbw1)");
    add_seed(di);

    auto* ev = app.add_subcommand("eval", "Evaluate a student checkpoint");
    ev->add_option("--config", config_path, "Experiment config file");
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--checkpoint", checkpoint, "Student checkpoint")->required();
    ev->add_option("--teacher", teacher_path, "Teacher checkpoint (optional)");

    auto* mk = app.add_subcommand("masks", "Export partition/mask/attention images for a sample");
    mk->add_option("--config", config_path, "Experiment config file");
    mk->add_option("--sample", sample_path, "DBS1 scene file")->required();
    mk->add_option("--teacher", teacher_path, "Teacher checkpoint (optional)");
    mk->add_option("--out", out_dir, "Output directory");

    std::vector<std::string> plot_csvs, plot_labels;
    std::string plot_out = "curves.svg";
    auto* pl = app.add_subcommand("plot", "Render metrics CSVs into SVG learning curves");
    pl->add_option("--csv", plot_csvs, "Metrics CSV files")->required();
    pl->add_option("--label", plot_labels, "Series labels (one per CSV)");
    pl->add_option("--out", plot_out, "Output SVG basename");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    std::uint64_t* seed_override = seed_set ? &seed : nullptr;
    try {
        if (gen->parsed()) return cmd_gen(config_path, out_dir, seed_override);
        if (tt->parsed()) return cmd_train_teacher(config_path, data_dir, out_dir, seed_override);
        if (di->parsed()) return cmd_distill(config_path, data_dir, teacher_path, seed_override);
        if (ev->parsed()) return cmd_eval(config_path, data_dir, checkpoint, teacher_path);
        if (mk->parsed()) return cmd_masks(config_path, sample_path, teacher_path, out_dir);
        if (pl->parsed()) return cmd_plot(plot_csvs, plot_labels, plot_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
