#include "distillbev/region.hpp"

#include <algorithm>

namespace distillbev {

namespace {

double max_over_classes(const Heatmap& hm, std::size_t i, std::size_t j) {
    const std::size_t k = hm.dim(0);
    double mx = hm.at(0, i, j);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, hm.at(c, i, j));
    return mx;
}

}  // namespace

std::vector<bool> compute_fp_cells(const Heatmap& h_teacher, const Heatmap& h_gt,
                                   double gamma) {
    if (!h_teacher.same_shape(h_gt))
        throw std::invalid_argument("compute_fp_cells: heatmap shape mismatch");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("compute_fp_cells: gamma must be in (0,1)");
    const std::size_t h = h_teacher.dim(1), w = h_teacher.dim(2);
    std::vector<bool> fp(h * w, false);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            fp[i * w + j] = max_over_classes(h_teacher, i, j) > gamma &&
                            max_over_classes(h_gt, i, j) < gamma;
    return fp;
}

RegionPartition decompose(const OwnerGrid& owners, const std::vector<bool>& fp_cells,
                          const Heatmap& h_teacher, double gamma) {
    if (h_teacher.dim(1) != owners.h || h_teacher.dim(2) != owners.w ||
        fp_cells.size() != owners.h * owners.w)
        throw std::invalid_argument("decompose: grid shape mismatch");
    RegionPartition p;
    p.h = owners.h;
    p.w = owners.w;
    p.label.resize(p.h * p.w);
    p.owner.assign(p.h * p.w, kNoOwner);
    for (std::size_t i = 0; i < p.h; ++i)
        for (std::size_t j = 0; j < p.w; ++j) {
            const std::size_t idx = i * p.w + j;
            const std::int32_t own = owners.at(i, j);
            if (own != kNoOwner) {
                // ground-truth box membership takes precedence over FP
                p.owner[idx] = own;
                p.label[idx] = max_over_classes(h_teacher, i, j) > gamma ? RegionLabel::TP
                                                                         : RegionLabel::FN;
            } else {
                p.label[idx] = fp_cells[idx] ? RegionLabel::FP : RegionLabel::TN;
            }
        }
    return p;
}

RegionMask build_mask(const RegionPartition& partition, double eta, bool include_fp) {
    if (eta < 0.0) throw std::invalid_argument("build_mask: eta must be >= 0");
    RegionMask out;
    out.eta = eta;
    out.m = Tensor({partition.h, partition.w});
    out.m_bar = Tensor({partition.h, partition.w});
    for (std::size_t idx = 0; idx < partition.label.size(); ++idx) {
        double m = 0.0;
        switch (partition.label[idx]) {
            case RegionLabel::TP:
            case RegionLabel::FN:
                m = 1.0;
                break;
            case RegionLabel::FP:
                m = include_fp ? eta : 0.0;
                break;
            case RegionLabel::TN:
                m = 0.0;
                break;
        }
        out.m[idx] = m;
        out.m_bar[idx] = m == 0.0 ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace distillbev
