#pragma once

#include <cstdint>
#include <vector>

#include "distillbev/bev_geometry.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

enum class RegionLabel : std::uint8_t { TP = 0, FN = 1, FP = 2, TN = 3 };

// Per-cell classification of a BEV grid plus the owning object on TP/FN cells.
struct RegionPartition {
    std::size_t h = 0, w = 0;
    std::vector<RegionLabel> label;
    std::vector<std::int32_t> owner;  // defined iff label is TP or FN

    RegionLabel at(std::size_t i, std::size_t j) const { return label[i * w + j]; }
    std::int32_t owner_at(std::size_t i, std::size_t j) const { return owner[i * w + j]; }
};

// The mask M and its complement from the region decomposition: m takes values
// in {0, eta, 1}; m_bar is 1 exactly where m is 0.
struct RegionMask {
    Tensor m;      // [H,W]
    Tensor m_bar;  // [H,W], {0,1}
    double eta = 0.0;
};

// FP candidates: teacher confidence above gamma while ground truth is below,
// both reduced over classes by max, strict inequalities.
std::vector<bool> compute_fp_cells(const Heatmap& h_teacher, const Heatmap& h_gt,
                                   double gamma);

RegionPartition decompose(const OwnerGrid& owners, const std::vector<bool>& fp_cells,
                          const Heatmap& h_teacher, double gamma);

// m = 1 on TP and FN, eta on FP (when include_fp), 0 on TN.
RegionMask build_mask(const RegionPartition& partition, double eta, bool include_fp);

}  // namespace distillbev
