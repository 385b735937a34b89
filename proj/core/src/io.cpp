#include "distillbev/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace distillbev {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void put_name(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_name(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("io: implausible name length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("io: cannot open for writing: " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("io: cannot open for reading: " + path.string());
    return is;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
    auto os = open_out(path);
    os.write("DBW1", 4);
    put_u16(os, 1);
    for (const auto& p : store.all()) {
        put_name(os, p.name);
        put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < p.value.size(); ++i) put_f64(os, p.value[i]);
    }
    if (!os) throw std::runtime_error("io: write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
    auto is = open_in(path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DBW1", 4) != 0)
        throw std::runtime_error("io: not a DBW1 checkpoint: " + path.string());
    const std::uint16_t version = get_u16(is);
    if (version != 1) throw std::runtime_error("io: unsupported DBW1 version");
    while (is.peek() != EOF) {
        const std::string name = get_name(is);
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = get_u32(is);
        std::vector<double> data(Tensor::count(shape));
        for (auto& v : data) v = get_f64(is);
        if (!is) throw std::runtime_error("io: truncated checkpoint: " + path.string());
        Tensor t = Tensor::checked(shape, std::move(data));
        Param& p = store.get(name);
        if (!p.value.same_shape(t))
            throw std::runtime_error("io: checkpoint shape mismatch for " + name);
        p.value = std::move(t);
    }
}

void save_scene(const std::filesystem::path& path, const SceneSample& sample,
                const GridSpec& grid) {
    auto os = open_out(path);
    os.write("DBS1", 4);
    put_u16(os, 1);
    put_f64(os, grid.x_min);
    put_f64(os, grid.x_max);
    put_f64(os, grid.y_min);
    put_f64(os, grid.y_max);
    put_u32(os, grid.cells_x);
    put_u32(os, grid.cells_y);
    put_u32(os, static_cast<std::uint32_t>(sample.boxes.size()));
    for (const BevBox& b : sample.boxes) {
        put_f64(os, b.cx);
        put_f64(os, b.cy);
        put_f64(os, b.length);
        put_f64(os, b.width);
        put_f64(os, b.yaw);
        put_f64(os, 0.0);  // reserved
        put_u32(os, b.class_id);
    }
    const std::pair<const char*, const Tensor*> blocks[] = {
        {"teacher_input", &sample.teacher_input},
        {"student_input", &sample.student_input},
        {"gt_heatmap", &sample.gt_heatmap},
    };
    put_u32(os, 3);
    for (const auto& [name, t] : blocks) {
        put_name(os, name);
        put_u32(os, static_cast<std::uint32_t>(t->dim(0)));
        put_u32(os, static_cast<std::uint32_t>(t->dim(1)));
        put_u32(os, static_cast<std::uint32_t>(t->dim(2)));
        for (std::size_t i = 0; i < t->size(); ++i)
            put_f32(os, static_cast<float>((*t)[i]));
    }
    put_f64(os, sample.ego_pose.tx);
    put_f64(os, sample.ego_pose.ty);
    put_f64(os, sample.ego_pose.heading);
    put_u64(os, sample.seed);
    if (!os) throw std::runtime_error("io: write failed: " + path.string());
}

SceneSample load_scene(const std::filesystem::path& path, GridSpec& grid_out) {
    auto is = open_in(path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DBS1", 4) != 0)
        throw std::runtime_error("io: not a DBS1 scene: " + path.string());
    if (get_u16(is) != 1) throw std::runtime_error("io: unsupported DBS1 version");
    grid_out.x_min = get_f64(is);
    grid_out.x_max = get_f64(is);
    grid_out.y_min = get_f64(is);
    grid_out.y_max = get_f64(is);
    grid_out.cells_x = get_u32(is);
    grid_out.cells_y = get_u32(is);
    grid_out.validate();
    SceneSample s;
    const std::uint32_t n_boxes = get_u32(is);
    for (std::uint32_t k = 0; k < n_boxes; ++k) {
        BevBox b;
        b.cx = get_f64(is);
        b.cy = get_f64(is);
        b.length = get_f64(is);
        b.width = get_f64(is);
        b.yaw = get_f64(is);
        get_f64(is);  // reserved
        b.class_id = get_u32(is);
        s.boxes.push_back(b);
    }
    const std::uint32_t n_blocks = get_u32(is);
    for (std::uint32_t k = 0; k < n_blocks; ++k) {
        const std::string name = get_name(is);
        const std::size_t c = get_u32(is), h = get_u32(is), w = get_u32(is);
        Tensor t({c, h, w});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(get_f32(is));
        if (name == "teacher_input")
            s.teacher_input = std::move(t);
        else if (name == "student_input")
            s.student_input = std::move(t);
        else if (name == "gt_heatmap")
            s.gt_heatmap = std::move(t);
        else
            throw std::runtime_error("io: unknown channel block: " + name);
    }
    s.ego_pose.tx = get_f64(is);
    s.ego_pose.ty = get_f64(is);
    s.ego_pose.heading = get_f64(is);
    s.seed = get_u64(is);
    if (!is) throw std::runtime_error("io: truncated scene: " + path.string());
    return s;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& files,
                    const std::string& config_text, std::uint64_t seed) {
    std::ofstream os(dir / "manifest.txt");
    if (!os) throw std::runtime_error("io: cannot write manifest in " + dir.string());
    os << "format = DBS1\n";
    os << "seed = " << seed << "\n";
    os << "count = " << files.size() << "\n";
    for (const auto& f : files) os << "file = " << f << "\n";
    os << "[config]\n" << config_text;
}

std::vector<std::string> read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw std::runtime_error("io: no manifest in " + dir.string());
    std::vector<std::string> files;
    std::string line;
    while (std::getline(is, line)) {
        if (line == "[config]") break;
        if (line.rfind("file = ", 0) == 0) files.push_back(line.substr(7));
    }
    return files;
}

namespace {

void put_u32_be(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v >> 24), static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff), static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void png_chunk(std::ostream& os, const char* type, const std::vector<unsigned char>& data) {
    put_u32_be(os, static_cast<std::uint32_t>(data.size()));
    std::vector<unsigned char> body(4 + data.size());
    std::memcpy(body.data(), type, 4);
    std::copy(data.begin(), data.end(), body.begin() + 4);
    os.write(reinterpret_cast<const char*>(body.data()),
             static_cast<std::streamsize>(body.size()));
    const auto crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
    put_u32_be(os, static_cast<std::uint32_t>(crc));
}

std::vector<unsigned char> zlib_deflate(const std::vector<unsigned char>& raw) {
    uLongf out_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> out(out_len);
    if (compress2(out.data(), &out_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("io: zlib compression failed");
    out.resize(out_len);
    return out;
}

// colortype 0 = grayscale, 3 = palette
void write_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
               const std::vector<unsigned char>& pixels, int colortype,
               const std::vector<unsigned char>& palette) {
    auto os = open_out(path);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    auto push32 = [&ihdr](std::uint32_t v) {
        ihdr.push_back(static_cast<unsigned char>(v >> 24));
        ihdr.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        ihdr.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
        ihdr.push_back(static_cast<unsigned char>(v & 0xff));
    };
    push32(static_cast<std::uint32_t>(w));
    push32(static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(static_cast<unsigned char>(colortype));
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    png_chunk(os, "IHDR", ihdr);

    if (colortype == 3) png_chunk(os, "PLTE", palette);

    std::vector<unsigned char> raw;
    raw.reserve(h * (w + 1));
    for (std::size_t i = 0; i < h; ++i) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels.begin() + static_cast<long>(i * w),
                   pixels.begin() + static_cast<long>((i + 1) * w));
    }
    png_chunk(os, "IDAT", zlib_deflate(raw));
    png_chunk(os, "IEND", {});
    if (!os) throw std::runtime_error("io: write failed: " + path.string());
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const Tensor& grid, double lo,
                    double hi) {
    if (grid.rank() != 2) throw std::invalid_argument("write_png_gray: expected [H,W]");
    const std::size_t h = grid.dim(0), w = grid.dim(1);
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<unsigned char> px(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const double t = std::clamp((grid[i] - lo) / span, 0.0, 1.0);
        px[i] = static_cast<unsigned char>(std::lround(255.0 * t));
    }
    write_png(path, h, w, px, 0, {});
}

void write_png_labels(const std::filesystem::path& path, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& labels) {
    if (labels.size() != h * w) throw std::invalid_argument("write_png_labels: size mismatch");
    // TP green, FN red, FP orange, TN dark gray
    const std::vector<unsigned char> palette = {0x2e, 0xcc, 0x40, 0xff, 0x41, 0x36,
                                                0xff, 0x85, 0x1b, 0x30, 0x30, 0x30};
    std::vector<unsigned char> px(labels.begin(), labels.end());
    write_png(path, h, w, px, 3, palette);
}

void write_raw_grid(const std::filesystem::path& path, const Tensor& grid) {
    if (grid.rank() != 2) throw std::invalid_argument("write_raw_grid: expected [H,W]");
    auto os = open_out(path);
    put_u32(os, static_cast<std::uint32_t>(grid.dim(0)));
    put_u32(os, static_cast<std::uint32_t>(grid.dim(1)));
    for (std::size_t i = 0; i < grid.size(); ++i) put_f64(os, grid[i]);
    if (!os) throw std::runtime_error("io: write failed: " + path.string());
}

void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<PlotSeries>& series) {
    const double width = 720, height = 420;
    const double ml = 60, mr = 20, mt = 40, mb = 40;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    bool any = false;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                x_min = x_max = s.x[i];
                y_min = y_max = s.y[i];
                any = true;
            }
            x_min = std::min(x_min, s.x[i]);
            x_max = std::max(x_max, s.x[i]);
            y_min = std::min(y_min, s.y[i]);
            y_max = std::max(y_max, s.y[i]);
        }
    if (x_max == x_min) x_max = x_min + 1;
    if (y_max == y_min) y_max = y_min + 1;
    auto sx = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr); };
    auto sy = [&](double y) {
        return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
    };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("io: cannot write " + path.string());
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
          "font-family=\"sans-serif\">"
       << title << "</text>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
       << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
       << height - mb << "\" stroke=\"black\"/>\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", y_min);
    os << "<text x=\"" << ml - 6 << "\" y=\"" << height - mb << "\" text-anchor=\"end\" "
          "font-size=\"11\" font-family=\"sans-serif\">"
       << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", y_max);
    os << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4 << "\" text-anchor=\"end\" "
          "font-size=\"11\" font-family=\"sans-serif\">"
       << buf << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill=\"none\" stroke=\"" << colors[si % 6]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << width - mr - 8 << "\" y=\"" << mt + 16 * (si + 1)
           << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\" fill=\""
           << colors[si % 6] << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace distillbev
