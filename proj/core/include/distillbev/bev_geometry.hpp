#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "distillbev/tensor.hpp"

namespace distillbev {

// Rectangular BEV grid over metric ground coordinates. Cell (i, j) covers
// x in [x_min + j*cell_x, ...), y in [y_min + i*cell_y, ...); i indexes rows
// along y, j indexes columns along x.
struct GridSpec {
    double x_min = 0.0, x_max = 0.0;
    double y_min = 0.0, y_max = 0.0;
    std::uint32_t cells_x = 0, cells_y = 0;

    double cell_size_x() const { return (x_max - x_min) / cells_x; }
    double cell_size_y() const { return (y_max - y_min) / cells_y; }
    double center_x(std::size_t j) const { return x_min + (j + 0.5) * cell_size_x(); }
    double center_y(std::size_t i) const { return y_min + (i + 0.5) * cell_size_y(); }

    void validate() const {
        if (!(x_max > x_min) || !(y_max > y_min) || cells_x == 0 || cells_y == 0)
            throw std::invalid_argument("grid: degenerate extent or zero cells");
    }

    // Same metric extent, different resolution.
    GridSpec with_cells(std::uint32_t cx, std::uint32_t cy) const {
        return GridSpec{x_min, x_max, y_min, y_max, cx, cy};
    }
};

// Rotated ground-truth rectangle in BEV metric coordinates.
struct BevBox {
    double cx = 0.0, cy = 0.0;
    double length = 0.0;  // extent along the box's heading
    double width = 0.0;
    double yaw = 0.0;  // radians, (-pi, pi]
    std::uint32_t class_id = 0;

    double area() const { return length * width; }
    bool contains(double px, double py) const;
};

// Ego pose in world coordinates: position plus heading.
struct EgoPose {
    double tx = 0.0, ty = 0.0;
    double heading = 0.0;
};

constexpr std::int32_t kNoOwner = -1;

// Per-cell owning-object index (kNoOwner where no box covers the cell).
struct OwnerGrid {
    std::size_t h = 0, w = 0;
    std::vector<std::int32_t> owner;

    std::int32_t at(std::size_t i, std::size_t j) const { return owner[i * w + j]; }
    std::int32_t& at(std::size_t i, std::size_t j) { return owner[i * w + j]; }
};

// Cell-center containment; overlap ties go to the smaller-footprint box, and
// every box is guaranteed at least the cell containing its center (when that
// cell lies on the grid).
OwnerGrid rasterize_boxes(const std::vector<BevBox>& boxes, const GridSpec& grid);

// Per-class Gaussian center heatmap, sigma = max(0.2*min(length,width), cell),
// overlapping contributions combined by elementwise max. Output [K,H,W].
Heatmap render_heatmap(const std::vector<BevBox>& boxes, const GridSpec& grid,
                       std::uint32_t num_classes);

// Nearest-neighbor resample of a feature map from one ego frame to another.
// Target cells mapping outside the source grid are zero-filled.
FeatureMap warp_bev(const FeatureMap& feature, const EgoPose& from_pose,
                    const EgoPose& to_pose, const GridSpec& grid);

// Exact intersection area of two rotated rectangles (convex polygon clip).
double box_intersection_area(const BevBox& a, const BevBox& b);

inline double box_iou(const BevBox& a, const BevBox& b) {
    const double inter = box_intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace distillbev
