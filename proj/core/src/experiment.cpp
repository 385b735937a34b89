#include "distillbev/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace distillbev {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad number for " + key + ": " + v);
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    std::uint64_t out;
    // stoull silently wraps negatives, so reject a leading sign up front
    if (v.empty() || v[0] == '-' || v[0] == '+')
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
    if (pos != v.size())
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

DistillMode parse_mode(const std::string& v) {
    if (v == "off") return DistillMode::off;
    if (v == "plain") return DistillMode::plain;
    if (v == "full") return DistillMode::full;
    throw std::invalid_argument("config: distill must be off|plain|full, got " + v);
}

const char* mode_name(DistillMode m) {
    switch (m) {
        case DistillMode::off: return "off";
        case DistillMode::plain: return "plain";
        case DistillMode::full: return "full";
    }
    return "off";
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "scene" && section != "network" && section != "train" &&
                section != "distill" && section != "output")
                throw std::invalid_argument("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value at line " +
                                        std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string qual = section + "." + key;

        if (qual == "scene.grid_x_min") cfg.scene.grid.x_min = parse_double(qual, val);
        else if (qual == "scene.grid_x_max") cfg.scene.grid.x_max = parse_double(qual, val);
        else if (qual == "scene.grid_y_min") cfg.scene.grid.y_min = parse_double(qual, val);
        else if (qual == "scene.grid_y_max") cfg.scene.grid.y_max = parse_double(qual, val);
        else if (qual == "scene.cells_x") cfg.scene.grid.cells_x = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.cells_y") cfg.scene.grid.cells_y = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.classes") cfg.scene.num_classes = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.box_count_min") cfg.scene.box_count_min = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.box_count_max") cfg.scene.box_count_max = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.fp_rate") cfg.scene.fp_rate = parse_double(qual, val);
        else if (qual == "scene.miss_rate") cfg.scene.miss_rate = parse_double(qual, val);
        else if (qual == "scene.clutter_rate") cfg.scene.clutter_rate = parse_double(qual, val);
        else if (qual == "scene.clutter_visibility") cfg.scene.clutter_visibility = parse_double(qual, val);
        else if (qual == "scene.distractor_rate") cfg.scene.distractor_rate = parse_double(qual, val);
        else if (qual == "scene.blur_strength") cfg.scene.blur_strength = parse_double(qual, val);
        else if (qual == "scene.depth_noise") cfg.scene.depth_noise = parse_double(qual, val);
        else if (qual == "scene.frames") cfg.scene.frames = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.ego_speed_min") cfg.scene.ego_speed_min = parse_double(qual, val);
        else if (qual == "scene.ego_speed_max") cfg.scene.ego_speed_max = parse_double(qual, val);
        else if (qual == "scene.train_scenes") cfg.train_scenes = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "scene.eval_scenes") cfg.eval_scenes = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "network.c_b1") cfg.c_b1 = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "network.c_b2") cfg.c_b2 = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "network.c_h") cfg.c_h = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "network.teacher_c_b1") cfg.teacher_c_b1 = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "network.teacher_c_b2") cfg.teacher_c_b2 = static_cast<std::uint32_t>(parse_uint(qual, val));
        else if (qual == "train.epochs") cfg.epochs = parse_uint(qual, val);
        else if (qual == "train.lr") cfg.lr = parse_double(qual, val);
        else if (qual == "train.weight_decay") cfg.weight_decay = parse_double(qual, val);
        else if (qual == "train.cosine") cfg.cosine = parse_bool(qual, val);
        else if (qual == "train.seed") cfg.seed = parse_uint(qual, val);
        else if (qual == "train.distill") cfg.distill = parse_mode(val);
        else if (qual == "train.inherit_head") cfg.inherit_head = parse_bool(qual, val);
        else if (qual == "train.distill_weight") cfg.distill_weight = parse_double(qual, val);
        else if (qual == "train.temporal") cfg.temporal = parse_bool(qual, val);
        else if (qual == "distill.alpha") cfg.alpha = parse_double(qual, val);
        else if (qual == "distill.beta") cfg.beta = parse_double(qual, val);
        else if (qual == "distill.lambda") cfg.lambda = parse_double(qual, val);
        else if (qual == "distill.eta") cfg.eta = parse_double(qual, val);
        else if (qual == "distill.tau") cfg.tau = parse_double(qual, val);
        else if (qual == "distill.gamma") cfg.gamma = parse_double(qual, val);
        else if (qual == "distill.layers") cfg.distill_layers = val;
        else if (qual == "distill.include_fp") cfg.include_fp = parse_bool(qual, val);
        else if (qual == "output.dir") cfg.output_dir = val;
        else
            throw std::invalid_argument("config: unknown key " + qual);
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "[scene]\n";
    os << "grid_x_min = " << scene.grid.x_min << "\n";
    os << "grid_x_max = " << scene.grid.x_max << "\n";
    os << "grid_y_min = " << scene.grid.y_min << "\n";
    os << "grid_y_max = " << scene.grid.y_max << "\n";
    os << "cells_x = " << scene.grid.cells_x << "\n";
    os << "cells_y = " << scene.grid.cells_y << "\n";
    os << "classes = " << scene.num_classes << "\n";
    os << "box_count_min = " << scene.box_count_min << "\n";
    os << "box_count_max = " << scene.box_count_max << "\n";
    os << "fp_rate = " << scene.fp_rate << "\n";
    os << "miss_rate = " << scene.miss_rate << "\n";
    os << "clutter_rate = " << scene.clutter_rate << "\n";
    os << "clutter_visibility = " << scene.clutter_visibility << "\n";
    os << "distractor_rate = " << scene.distractor_rate << "\n";
    os << "blur_strength = " << scene.blur_strength << "\n";
    os << "depth_noise = " << scene.depth_noise << "\n";
    os << "frames = " << scene.frames << "\n";
    os << "ego_speed_min = " << scene.ego_speed_min << "\n";
    os << "ego_speed_max = " << scene.ego_speed_max << "\n";
    os << "train_scenes = " << train_scenes << "\n";
    os << "eval_scenes = " << eval_scenes << "\n";
    os << "[network]\n";
    os << "c_b1 = " << c_b1 << "\nc_b2 = " << c_b2 << "\nc_h = " << c_h << "\n";
    os << "teacher_c_b1 = " << teacher_c_b1 << "\nteacher_c_b2 = " << teacher_c_b2 << "\n";
    os << "[train]\n";
    os << "epochs = " << epochs << "\n";
    os << "lr = " << lr << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "cosine = " << (cosine ? "true" : "false") << "\n";
    os << "seed = " << seed << "\n";
    os << "distill = " << mode_name(distill) << "\n";
    os << "inherit_head = " << (inherit_head ? "true" : "false") << "\n";
    os << "distill_weight = " << distill_weight << "\n";
    os << "temporal = " << (temporal ? "true" : "false") << "\n";
    os << "[distill]\n";
    os << "alpha = " << alpha << "\nbeta = " << beta << "\nlambda = " << lambda << "\n";
    os << "eta = " << eta << "\ntau = " << tau << "\ngamma = " << gamma << "\n";
    os << "layers = " << distill_layers << "\n";
    os << "include_fp = " << (include_fp ? "true" : "false") << "\n";
    os << "[output]\n";
    os << "dir = " << output_dir << "\n";
    return os.str();
}

NetworkSpec ExperimentConfig::teacher_spec() const {
    NetworkSpec s;
    s.kind = NetKind::teacher;
    s.in_channels = 2;
    s.num_classes = scene.num_classes;
    s.c_b1 = teacher_c_b1 ? teacher_c_b1 : c_b1;
    s.c_b2 = teacher_c_b2 ? teacher_c_b2 : c_b2;
    s.c_h = c_h;
    return s;
}

NetworkSpec ExperimentConfig::student_spec() const {
    NetworkSpec s = teacher_spec();
    s.kind = NetKind::student;
    s.c_b1 = c_b1;
    s.c_b2 = c_b2;
    s.temporal = temporal;
    return s;
}

DistillConfig ExperimentConfig::make_distill_config() const {
    DistillConfig dc;
    dc.alpha = alpha;
    dc.beta = beta;
    dc.lambda = lambda;
    dc.eta = eta;
    dc.tau = tau;
    dc.gamma = gamma;
    std::stringstream ss(distill_layers);
    std::string name;
    std::vector<std::string> names;
    while (std::getline(ss, name, ',')) {
        name = trim(name);
        if (!name.empty()) names.push_back(name);
    }
    for (const std::string& n : names) {
        LayerPairSpec pair;
        pair.teacher_layer = n;
        pair.student_layer = n;
        pair.include_fp = include_fp && n == "H";
        std::size_t ch_s = 0, ch_t = 0;
        if (n == "B1") {
            ch_s = c_b1;
            ch_t = teacher_c_b1 ? teacher_c_b1 : c_b1;
        } else if (n == "B2") {
            ch_s = c_b2;
            ch_t = teacher_c_b2 ? teacher_c_b2 : c_b2;
        } else if (n == "H") {
            ch_s = ch_t = c_h;
        } else if (n != "B0") {
            throw std::invalid_argument("config: unknown distill layer " + n);
        } else {
            ch_s = ch_t = c_b1;  // rejected by validate() below, keep shape plausible
        }
        // student runs at half resolution, so every pair upsamples by 2; the
        // adapter also maps the student's channel width onto the teacher's
        const AdapterKind kind = n == "H" ? AdapterKind::prehead : AdapterKind::intermediate;
        pair.adapter = std::make_shared<AdaptationModule>(kind, 2, ch_s, ch_t, "adapt." + n);
        dc.layers.push_back(std::move(pair));
    }
    dc.validate();
    return dc;
}

TrainConfig ExperimentConfig::make_train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = lr;
    tc.weight_decay = weight_decay;
    tc.cosine = cosine;
    tc.seed = seed;
    tc.distill = distill;
    if (distill != DistillMode::off) tc.distill_cfg = make_distill_config();
    tc.inherit_head = inherit_head;
    tc.distill_weight = distill_weight;
    tc.temporal = temporal;
    return tc;
}

ToyNetwork make_teacher(const ExperimentConfig& cfg) {
    return ToyNetwork(cfg.teacher_spec(), cfg.seed + 1);
}

ToyNetwork make_student(const ExperimentConfig& cfg) {
    ToyNetwork student(cfg.student_spec(), cfg.seed + 2);
    if (cfg.distill != DistillMode::off) {
        const DistillConfig dc = cfg.make_distill_config();
        Rng rng(cfg.seed + 3, 0, 200);
        for (const auto& pair : dc.layers) pair.adapter->init_params(student.params(), rng);
    }
    return student;
}

Dataset generate_dataset(const SceneConfig& config, std::uint64_t seed, std::uint32_t count) {
    config.validate();
    Dataset ds;
    ds.grid = config.grid;
    ds.scenes.resize(count);

    unsigned hw = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("DISTILLBEV_THREADS")) {
        const unsigned cap = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
        if (cap > 0) hw = std::min(hw, cap);
    }
    const unsigned workers = std::max(1u, std::min(hw, count));

    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&, t]() {
            for (std::uint32_t i = t; i < count; i += workers)
                ds.scenes[i] = generate_scene(config, seed + i);
        });
    for (auto& th : pool) th.join();
    return ds;
}

}  // namespace distillbev
