#include "distillbev/scene.hpp"

#include <algorithm>
#include <cmath>

#include "distillbev/rng.hpp"

namespace distillbev {

namespace {

// fixed stream ids so parallel generation consumes randomness identically
enum Stream : std::uint64_t {
    kBoxes = 1,
    kPoints = 2,
    kClutter = 3,
    kStudentNoise = 4,
    kEgo = 5,
    kTeacherSim = 6,
    kDistractors = 7,
};

constexpr double kPi = 3.141592653589793;

struct WorldPoint {
    double x, y;
    double density;  // contribution to the density channel
};

struct World {
    std::vector<BevBox> boxes;  // world coordinates
    std::vector<WorldPoint> points;
};

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a <= -kPi) a += 2.0 * kPi;
    return a;
}

BevBox to_ego(const BevBox& b, const EgoPose& pose) {
    const double c = std::cos(pose.heading), s = std::sin(pose.heading);
    const double dx = b.cx - pose.tx, dy = b.cy - pose.ty;
    BevBox out = b;
    out.cx = c * dx + s * dy;
    out.cy = -s * dx + c * dy;
    out.yaw = wrap_angle(b.yaw - pose.heading);
    return out;
}

World generate_world(const SceneConfig& cfg, std::uint64_t seed, double extra_margin) {
    World world;
    Rng box_rng(seed, 0, kBoxes);
    const GridSpec& g = cfg.grid;
    const std::uint32_t count =
        cfg.box_count_min +
        static_cast<std::uint32_t>(box_rng.below(cfg.box_count_max - cfg.box_count_min + 1));
    for (std::uint32_t k = 0; k < count; ++k) {
        BevBox candidate;
        bool placed = false;
        for (int attempt = 0; attempt < 32; ++attempt) {
            const std::uint32_t cls =
                static_cast<std::uint32_t>(box_rng.below(cfg.num_classes));
            const ClassSizeSpec& sz = cfg.class_sizes[cls % cfg.class_sizes.size()];
            candidate.class_id = cls;
            candidate.length = box_rng.uniform(sz.length_min, sz.length_max);
            candidate.width = box_rng.uniform(sz.width_min, sz.width_max);
            candidate.cx = box_rng.uniform(g.x_min + 1.0, g.x_max - 1.0);
            candidate.cy = box_rng.uniform(g.y_min + 1.0, g.y_max - 1.0);
            candidate.yaw = wrap_angle(box_rng.uniform(-kPi, kPi));
            if (candidate.yaw <= -kPi) candidate.yaw = kPi;
            bool ok = true;
            for (const BevBox& other : world.boxes) {
                if (box_iou(candidate, other) > 0.5) {
                    ok = false;
                    break;
                }
                // Keep same-class centers at least two cells apart on one axis;
                // otherwise their heatmap peaks merge into a single plateau.
                if (other.class_id == candidate.class_id &&
                    std::abs(candidate.cx - other.cx) < 2.0 * g.cell_size_x() &&
                    std::abs(candidate.cy - other.cy) < 2.0 * g.cell_size_y()) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                placed = true;
                break;
            }
        }
        if (placed) world.boxes.push_back(candidate);
    }

    // LiDAR-like hits inside boxes, a couple per square meter
    Rng pt_rng(seed, 0, kPoints);
    for (const BevBox& b : world.boxes) {
        const std::size_t n =
            std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(2.0 * b.area())));
        const double c = std::cos(b.yaw), s = std::sin(b.yaw);
        for (std::size_t i = 0; i < n; ++i) {
            const double u = pt_rng.uniform(-0.5, 0.5) * b.length;
            const double v = pt_rng.uniform(-0.5, 0.5) * b.width;
            world.points.push_back({b.cx + c * u - s * v, b.cy + s * u + c * v, 1.0});
        }
    }

    // static background clutter over the grid extent plus the ego travel margin
    Rng cl_rng(seed, 0, kClutter);
    const double n_cells = static_cast<double>(g.cells_x) * g.cells_y;
    // Per-scene clutter level: some scenes are nearly clean, others dense
    // (weather / surface conditions), averaging to the configured rate.
    const double scene_rate = cl_rng.uniform(0.0, 2.0 * cfg.clutter_rate);
    const std::size_t n_clutter =
        static_cast<std::size_t>(std::lround(scene_rate * n_cells));
    for (std::size_t i = 0; i < n_clutter; ++i) {
        world.points.push_back({cl_rng.uniform(g.x_min - extra_margin, g.x_max + extra_margin),
                                cl_rng.uniform(g.y_min - extra_margin, g.y_max + extra_margin),
                                cl_rng.uniform(0.2, 0.99)});
    }

    // Unannotated distractors: compact point clusters (bushes, poles, street
    // furniture) that resemble small objects and are visible to both sensors.
    Rng ds_rng(seed, 0, kDistractors);
    const std::size_t n_distract =
        static_cast<std::size_t>(std::lround(cfg.distractor_rate * n_cells));
    for (std::size_t i = 0; i < n_distract; ++i) {
        const double cx = ds_rng.uniform(g.x_min + 1.0, g.x_max - 1.0);
        const double cy = ds_rng.uniform(g.y_min + 1.0, g.y_max - 1.0);
        const std::size_t pts = 3 + ds_rng.below(6);
        for (std::size_t p = 0; p < pts; ++p) {
            world.points.push_back({cx + ds_rng.uniform(-0.8, 0.8),
                                    cy + ds_rng.uniform(-0.8, 0.8), 1.0});
        }
    }
    return world;
}

void deposit(FeatureMap& f, const GridSpec& g, double x, double y, double density) {
    const long j = static_cast<long>(std::floor((x - g.x_min) / g.cell_size_x()));
    const long i = static_cast<long>(std::floor((y - g.y_min) / g.cell_size_y()));
    if (i < 0 || i >= static_cast<long>(g.cells_y) || j < 0 || j >= static_cast<long>(g.cells_x))
        return;
    f.at(0, i, j) = std::min(1.0, f.at(0, i, j) + 0.25 * density);
    f.at(1, i, j) = 1.0;
}

// one pass of 3x3 box smoothing per channel
void box_blur(FeatureMap& f) {
    const std::size_t c = f.dim(0), h = f.dim(1), w = f.dim(2);
    FeatureMap src = f;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                double acc = 0.0;
                int cnt = 0;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const long ii = static_cast<long>(i) + di;
                        const long jj = static_cast<long>(j) + dj;
                        if (ii < 0 || ii >= static_cast<long>(h) || jj < 0 ||
                            jj >= static_cast<long>(w))
                            continue;
                        acc += src.at(ch, ii, jj);
                        ++cnt;
                    }
                f.at(ch, i, j) = acc / cnt;
            }
}

SceneSample render_frame(const World& world, const EgoPose& pose, const SceneConfig& cfg,
                         std::uint64_t seed, std::uint32_t frame) {
    const GridSpec& g = cfg.grid;
    SceneSample s;
    s.seed = seed;
    s.ego_pose = pose;
    for (const BevBox& b : world.boxes) s.boxes.push_back(to_ego(b, pose));
    s.gt_heatmap = render_heatmap(s.boxes, g, cfg.num_classes);

    const double ch = std::cos(pose.heading), sh = std::sin(pose.heading);
    auto world_to_ego = [&](double wx, double wy, double& ex, double& ey) {
        ex = ch * (wx - pose.tx) + sh * (wy - pose.ty);
        ey = -sh * (wx - pose.tx) + ch * (wy - pose.ty);
    };

    s.teacher_input = FeatureMap({2, g.cells_y, g.cells_x});
    for (const WorldPoint& p : world.points) {
        double ex, ey;
        world_to_ego(p.x, p.y, ex, ey);
        deposit(s.teacher_input, g, ex, ey, p.density);
    }

    // lossy depth lifting: radial displacement growing with range, then blur
    s.student_input = FeatureMap({2, g.cells_y, g.cells_x});
    Rng noise(seed, frame, kStudentNoise);
    const double r_max = std::hypot(g.x_max - g.x_min, g.y_max - g.y_min) * 0.5;
    const double cell = std::min(g.cell_size_x(), g.cell_size_y());
    for (const WorldPoint& p : world.points) {
        // clutter (low-density returns) is mostly invisible to the student
        if (p.density < 1.0 && noise.uniform(0.0, 1.0) >= cfg.clutter_visibility) continue;
        double ex, ey;
        world_to_ego(p.x, p.y, ex, ey);
        const double r = std::hypot(ex, ey);
        const double mag = cfg.depth_noise * cell * (r / r_max) * noise.normal();
        if (r > 1e-9) {
            ex += mag * ex / r;
            ey += mag * ey / r;
        }
        deposit(s.student_input, g, ex, ey, p.density);
    }
    const int passes = static_cast<int>(std::lround(cfg.blur_strength));
    for (int i = 0; i < passes; ++i) box_blur(s.student_input);
    return s;
}

}  // namespace

void SceneConfig::validate() const {
    grid.validate();
    if (num_classes == 0 || class_sizes.empty())
        throw std::invalid_argument("scene config: need classes and size specs");
    if (box_count_max < box_count_min)
        throw std::invalid_argument("scene config: box count range inverted");
    for (double p : {fp_rate, miss_rate})
        if (p < 0.0) throw std::invalid_argument("scene config: negative rate");
    if (clutter_visibility < 0.0 || clutter_visibility > 1.0)
        throw std::invalid_argument("scene config: clutter_visibility outside [0,1]");
    if (distractor_rate < 0.0)
        throw std::invalid_argument("scene config: distractor_rate negative");
    if (miss_rate > 1.0) throw std::invalid_argument("scene config: miss_rate > 1");
    if (frames == 0) throw std::invalid_argument("scene config: frames must be >= 1");
}

SceneSample generate_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    const World world = generate_world(config, seed, 0.0);
    return render_frame(world, EgoPose{}, config, seed, 0);
}

std::vector<SceneSample> generate_sequence(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    Rng ego_rng(seed, 0, kEgo);
    const double speed = ego_rng.uniform(config.ego_speed_min, config.ego_speed_max);
    // the last pose sits at speed * (frames - 1), so that is the extra world
    // extent needed; frames == 1 then reduces exactly to generate_scene
    const double margin = speed * static_cast<double>(config.frames - 1);
    const World world = generate_world(config, seed, margin);
    std::vector<SceneSample> out;
    for (std::uint32_t t = 0; t < config.frames; ++t) {
        // translation-only ego motion along +x, heading fixed
        EgoPose pose{speed * static_cast<double>(t), 0.0, 0.0};
        out.push_back(render_frame(world, pose, config, seed, t));
    }
    return out;
}

Heatmap simulate_teacher_heatmap(const Heatmap& gt, const std::vector<BevBox>& boxes,
                                 const GridSpec& grid, double fp_rate, double miss_rate,
                                 std::uint64_t seed) {
    if (miss_rate < 0.0 || miss_rate > 1.0 || fp_rate < 0.0)
        throw std::invalid_argument("simulate_teacher_heatmap: rate out of range");
    Rng rng(seed, 0, kTeacherSim);
    const std::uint32_t k = static_cast<std::uint32_t>(gt.dim(0));

    std::vector<BevBox> kept;
    for (const BevBox& b : boxes)
        if (!(rng.uniform() < miss_rate)) kept.push_back(b);
    Heatmap out = kept.size() == boxes.size() ? gt : render_heatmap(kept, grid, k);

    const std::uint64_t blobs = fp_rate > 0.0 ? rng.poisson(fp_rate) : 0;
    const double cell = std::min(grid.cell_size_x(), grid.cell_size_y());
    for (std::uint64_t n = 0; n < blobs; ++n) {
        double bx = 0.0, by = 0.0;
        bool found = false;
        for (int attempt = 0; attempt < 64 && !found; ++attempt) {
            bx = rng.uniform(grid.x_min, grid.x_max);
            by = rng.uniform(grid.y_min, grid.y_max);
            found = true;
            for (const BevBox& b : boxes)
                if (b.contains(bx, by)) {
                    found = false;
                    break;
                }
        }
        if (!found) continue;
        const double peak = rng.uniform(0.3, 0.9);
        const double sigma = rng.uniform(1.0, 2.5) * cell;
        const std::uint32_t cls = static_cast<std::uint32_t>(rng.below(k));
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (std::size_t i = 0; i < grid.cells_y; ++i)
            for (std::size_t j = 0; j < grid.cells_x; ++j) {
                const double dx = grid.center_x(j) - bx;
                const double dy = grid.center_y(i) - by;
                const double v = peak * std::exp(-(dx * dx + dy * dy) * inv2s2);
                double& cur = out.at(cls, i, j);
                cur = std::max(cur, v);
            }
    }
    return out;
}

}  // namespace distillbev
