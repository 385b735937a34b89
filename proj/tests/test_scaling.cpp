#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "distillbev/region.hpp"
#include "distillbev/scaling.hpp"
#include "distillbev/scene.hpp"

using namespace distillbev;

TEST_CASE("owned cells of a 2x3-cell box get 1/sqrt(6)") {
    GridSpec grid{0.0, 8.0, 0.0, 8.0, 8, 8};  // 1 m cells
    BevBox box{4.0, 4.0, 2.0, 3.0, 0.0, 0};   // 2 cells along y, 3 along x
    OwnerGrid owners = rasterize_boxes({box}, grid);
    Heatmap hg = render_heatmap({box}, grid, 1);
    RegionPartition p = decompose(owners, compute_fp_cells(hg, hg, 0.1), hg, 0.1);
    Tensor s = compute_scaling(p, {box}, grid);
    bool saw_owned = false;
    for (std::size_t i = 0; i < p.label.size(); ++i)
        if (p.owner[i] == 0) {
            saw_owned = true;
            CHECK(s[i] == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-12));
            CHECK(s[i] == doctest::Approx(0.40825).epsilon(1e-5));
        }
    CHECK(saw_owned);
}

TEST_CASE("5 FP cells each get 0.2 and sum to 1") {
    OwnerGrid owners{2, 3, std::vector<std::int32_t>(6, kNoOwner)};
    Heatmap ht({1, 2, 3}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.0});
    Heatmap hg({1, 2, 3});
    RegionPartition p = decompose(owners, compute_fp_cells(ht, hg, 0.1), ht, 0.1);
    Tensor s = compute_scaling(p, {}, GridSpec{0.0, 3.0, 0.0, 2.0, 3, 2});
    double fp_sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s[i] == doctest::Approx(0.2).epsilon(1e-12));
        fp_sum += s[i];
    }
    CHECK(fp_sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[5] == 1.0);  // the single TN cell carries the whole TN budget
}

TEST_CASE("no FP cells: no division blow-up, TN cells still 1/N_TN") {
    OwnerGrid owners{2, 2, std::vector<std::int32_t>(4, kNoOwner)};
    Heatmap zero({1, 2, 2});
    RegionPartition p = decompose(owners, compute_fp_cells(zero, zero, 0.1), zero, 0.1);
    Tensor s = compute_scaling(p, {}, GridSpec{0.0, 2.0, 0.0, 2.0, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s.all_finite());
}

TEST_CASE("sub-cell boxes clamp their footprint to one cell") {
    GridSpec grid{0.0, 8.0, 0.0, 8.0, 8, 8};
    BevBox tiny{4.5, 4.5, 0.3, 0.3, 0.0, 0};
    OwnerGrid owners = rasterize_boxes({tiny}, grid);
    Heatmap hg = render_heatmap({tiny}, grid, 1);
    RegionPartition p = decompose(owners, compute_fp_cells(hg, hg, 0.1), hg, 0.1);
    Tensor s = compute_scaling(p, {tiny}, grid);
    const std::size_t idx = 4 * 8 + 4;  // cell containing the center
    REQUIRE(p.owner[idx] == 0);
    CHECK(s[idx] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("scaling sums on random scenes: FP/TN budgets and per-object totals") {
    SceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        SceneSample sc = generate_scene(cfg, seed);
        Heatmap ht = simulate_teacher_heatmap(sc.gt_heatmap, sc.boxes, cfg.grid, cfg.fp_rate,
                                              cfg.miss_rate, seed);
        OwnerGrid owners = rasterize_boxes(sc.boxes, cfg.grid);
        RegionPartition p =
            decompose(owners, compute_fp_cells(ht, sc.gt_heatmap, 0.1), ht, 0.1);
        Tensor s = compute_scaling(p, sc.boxes, cfg.grid);

        double fp_sum = 0.0, tn_sum = 0.0;
        std::size_t n_fp = 0, n_tn = 0;
        std::vector<double> per_object(sc.boxes.size(), 0.0);
        std::vector<std::size_t> cells(sc.boxes.size(), 0);
        for (std::size_t i = 0; i < p.label.size(); ++i) {
            switch (p.label[i]) {
                case RegionLabel::FP: fp_sum += s[i]; ++n_fp; break;
                case RegionLabel::TN: tn_sum += s[i]; ++n_tn; break;
                default:
                    per_object[p.owner[i]] += s[i];
                    ++cells[p.owner[i]];
            }
        }
        if (n_fp > 0) CHECK(std::abs(fp_sum - 1.0) <= 1e-9);
        if (n_tn > 0) CHECK(std::abs(tn_sum - 1.0) <= 1e-9);
        for (std::size_t k = 0; k < sc.boxes.size(); ++k) {
            if (cells[k] == 0) continue;
            const double hk = std::max(1.0, sc.boxes[k].length / cfg.grid.cell_size_y());
            const double wk = std::max(1.0, sc.boxes[k].width / cfg.grid.cell_size_x());
            const double expect = static_cast<double>(cells[k]) / std::sqrt(hk * wk);
            CHECK(std::abs(per_object[k] - expect) <= 1e-9);
        }
    }
}
