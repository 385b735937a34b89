#pragma once

#include <vector>

#include "distillbev/bev_geometry.hpp"
#include "distillbev/region.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

// Per-cell scaling factor: cells owned by box k get 1/sqrt(h_k*w_k) with the
// box extent measured in grid cells (clamped below at one cell); FP cells get
// 1/N_FP and TN cells 1/N_TN, so each region sums to one.
Tensor compute_scaling(const RegionPartition& partition, const std::vector<BevBox>& boxes,
                       const GridSpec& grid);

}  // namespace distillbev
