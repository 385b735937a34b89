#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distillbev/params.hpp"
#include "distillbev/scene.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

// Weight checkpoint, magic "DBW1": version u16, then per-parameter records of
// name (u32 length + UTF-8 bytes), shape (u32 rank + u32 dims), and a
// little-endian 64-bit real payload. Records run to end of file.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

// Scene file, magic "DBS1": version u16, grid spec (4 LE f64 + 2 u32), box
// count u32 with per-box records (6 f64: cx, cy, length, width, yaw, reserved;
// class u32), named channel blocks (u32 count, then name + C/H/W u32 + 32-bit
// real payload each), ego pose (3 f64), seed u64.
void save_scene(const std::filesystem::path& path, const SceneSample& sample,
                const GridSpec& grid);
SceneSample load_scene(const std::filesystem::path& path, GridSpec& grid_out);

// Dataset directory: DBS1 files plus a structured-text manifest naming the
// files and the generating config.
void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& files,
                    const std::string& config_text, std::uint64_t seed);
std::vector<std::string> read_manifest(const std::filesystem::path& dir);

// 8-bit grayscale PNG of a [H,W] grid, linearly mapped from [lo, hi].
void write_png_gray(const std::filesystem::path& path, const Tensor& grid, double lo,
                    double hi);

// Fixed 4-color palette PNG for region labels (values 0..3).
void write_png_labels(const std::filesystem::path& path, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& labels);

// Raw array dump: u32 H, u32 W, then LE f64 row-major values.
void write_raw_grid(const std::filesystem::path& path, const Tensor& grid);

// Minimal multi-series SVG line plot; one polyline per series.
struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};
void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<PlotSeries>& series);

}  // namespace distillbev
