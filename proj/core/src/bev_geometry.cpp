#include "distillbev/bev_geometry.hpp"

#include <algorithm>
#include <cmath>

namespace distillbev {

bool BevBox::contains(double px, double py) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double dx = px - cx, dy = py - cy;
    // into box frame: u along heading (length), v across (width)
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return std::abs(u) <= 0.5 * length && std::abs(v) <= 0.5 * width;
}

OwnerGrid rasterize_boxes(const std::vector<BevBox>& boxes, const GridSpec& grid) {
    grid.validate();
    OwnerGrid out;
    out.h = grid.cells_y;
    out.w = grid.cells_x;
    out.owner.assign(out.h * out.w, kNoOwner);

    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const BevBox& b = boxes[k];
        if (!(b.length > 0.0) || !(b.width > 0.0))
            throw std::invalid_argument("rasterize_boxes: non-positive box extent");
        // bounding window of the rotated rectangle, clipped to the grid
        const double r = 0.5 * std::hypot(b.length, b.width);
        const long j0 = std::max(0L, static_cast<long>(std::floor((b.cx - r - grid.x_min) / grid.cell_size_x())));
        const long j1 = std::min<long>(grid.cells_x - 1, static_cast<long>(std::ceil((b.cx + r - grid.x_min) / grid.cell_size_x())));
        const long i0 = std::max(0L, static_cast<long>(std::floor((b.cy - r - grid.y_min) / grid.cell_size_y())));
        const long i1 = std::min<long>(grid.cells_y - 1, static_cast<long>(std::ceil((b.cy + r - grid.y_min) / grid.cell_size_y())));
        for (long i = i0; i <= i1; ++i)
            for (long j = j0; j <= j1; ++j) {
                if (!b.contains(grid.center_x(j), grid.center_y(i))) continue;
                std::int32_t& cur = out.at(i, j);
                if (cur == kNoOwner || b.area() < boxes[cur].area())
                    cur = static_cast<std::int32_t>(k);
            }
    }

    // force-assign the center cell when a footprint rounds to empty
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        bool owned = false;
        for (std::int32_t o : out.owner)
            if (o == static_cast<std::int32_t>(k)) {
                owned = true;
                break;
            }
        if (owned) continue;
        const long j = static_cast<long>(std::floor((boxes[k].cx - grid.x_min) / grid.cell_size_x()));
        const long i = static_cast<long>(std::floor((boxes[k].cy - grid.y_min) / grid.cell_size_y()));
        if (i >= 0 && i < static_cast<long>(grid.cells_y) && j >= 0 && j < static_cast<long>(grid.cells_x))
            out.at(i, j) = static_cast<std::int32_t>(k);
    }
    return out;
}

Heatmap render_heatmap(const std::vector<BevBox>& boxes, const GridSpec& grid,
                       std::uint32_t num_classes) {
    grid.validate();
    Heatmap hm({num_classes, grid.cells_y, grid.cells_x});
    const double cell = std::min(grid.cell_size_x(), grid.cell_size_y());
    for (const BevBox& b : boxes) {
        if (b.class_id >= num_classes)
            throw std::invalid_argument("render_heatmap: class_id out of range");
        const double sigma = std::max(0.2 * std::min(b.length, b.width), cell);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (std::size_t i = 0; i < grid.cells_y; ++i)
            for (std::size_t j = 0; j < grid.cells_x; ++j) {
                const double dx = grid.center_x(j) - b.cx;
                const double dy = grid.center_y(i) - b.cy;
                const double v = std::exp(-(dx * dx + dy * dy) * inv2s2);
                double& cur = hm.at(b.class_id, i, j);
                cur = std::max(cur, v);
            }
    }
    return hm;
}

FeatureMap warp_bev(const FeatureMap& feature, const EgoPose& from_pose,
                    const EgoPose& to_pose, const GridSpec& grid) {
    grid.validate();
    if (feature.rank() != 3 || feature.dim(1) != grid.cells_y || feature.dim(2) != grid.cells_x)
        throw std::invalid_argument("warp_bev: feature/grid shape mismatch");
    const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
    FeatureMap out({c, h, w});
    const double cf = std::cos(from_pose.heading), sf = std::sin(from_pose.heading);
    const double ct = std::cos(to_pose.heading), st = std::sin(to_pose.heading);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            // target ego coords -> world -> source ego coords
            const double px = grid.center_x(j), py = grid.center_y(i);
            const double wx = ct * px - st * py + to_pose.tx;
            const double wy = st * px + ct * py + to_pose.ty;
            const double sx = cf * (wx - from_pose.tx) + sf * (wy - from_pose.ty);
            const double sy = -sf * (wx - from_pose.tx) + cf * (wy - from_pose.ty);
            const long jj = static_cast<long>(std::floor((sx - grid.x_min) / grid.cell_size_x()));
            const long ii = static_cast<long>(std::floor((sy - grid.y_min) / grid.cell_size_y()));
            if (ii < 0 || ii >= static_cast<long>(h) || jj < 0 || jj >= static_cast<long>(w)) continue;
            for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, i, j) = feature.at(ch, ii, jj);
        }
    return out;
}

namespace {

struct Pt {
    double x, y;
};

std::vector<Pt> box_corners(const BevBox& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.length, hw = 0.5 * b.width;
    std::vector<Pt> out;
    for (auto [u, v] : {std::pair{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}})
        out.push_back({b.cx + c * u - s * v, b.cy + s * u + c * v});
    return out;
}

// Sutherland-Hodgman clip of a convex polygon against one half-plane.
std::vector<Pt> clip_edge(const std::vector<Pt>& poly, Pt a, Pt b) {
    auto side = [&](Pt p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    std::vector<Pt> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        Pt cur = poly[i], nxt = poly[(i + 1) % n];
        const double sc = side(cur), sn = side(nxt);
        if (sc >= 0.0) out.push_back(cur);
        if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
            const double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

double polygon_area(const std::vector<Pt>& p) {
    double a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Pt& u = p[i];
        const Pt& v = p[(i + 1) % p.size()];
        a += u.x * v.y - v.x * u.y;
    }
    return 0.5 * std::abs(a);
}

}  // namespace

double box_intersection_area(const BevBox& a, const BevBox& b) {
    std::vector<Pt> poly = box_corners(a);
    const std::vector<Pt> cb = box_corners(b);
    for (std::size_t i = 0; i < cb.size() && !poly.empty(); ++i)
        poly = clip_edge(poly, cb[i], cb[(i + 1) % cb.size()]);
    return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

}  // namespace distillbev
