#include "distillbev/scaling.hpp"

#include <algorithm>
#include <cmath>

namespace distillbev {

Tensor compute_scaling(const RegionPartition& partition, const std::vector<BevBox>& boxes,
                       const GridSpec& grid) {
    Tensor s({partition.h, partition.w});
    std::size_t n_fp = 0, n_tn = 0;
    for (RegionLabel l : partition.label) {
        if (l == RegionLabel::FP) ++n_fp;
        if (l == RegionLabel::TN) ++n_tn;
    }
    for (std::size_t idx = 0; idx < partition.label.size(); ++idx) {
        switch (partition.label[idx]) {
            case RegionLabel::TP:
            case RegionLabel::FN: {
                const std::int32_t k = partition.owner[idx];
                if (k < 0 || static_cast<std::size_t>(k) >= boxes.size())
                    throw std::invalid_argument("compute_scaling: owner index out of range");
                const BevBox& b = boxes[k];
                const double hk = std::max(1.0, b.length / grid.cell_size_y());
                const double wk = std::max(1.0, b.width / grid.cell_size_x());
                s[idx] = 1.0 / std::sqrt(hk * wk);
                break;
            }
            case RegionLabel::FP:
                s[idx] = 1.0 / static_cast<double>(n_fp);
                break;
            case RegionLabel::TN:
                s[idx] = 1.0 / static_cast<double>(n_tn);
                break;
        }
    }
    return s;
}

}  // namespace distillbev
