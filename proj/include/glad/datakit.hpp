#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "glad/core/rng.hpp"
#include "glad/io/blob.hpp"
#include "glad/tensor/tensor.hpp"

namespace glad {

// Hermetic procedural dataset: ten parametric glyph classes rendered with
// affine jitter, color jitter and background noise. Pixels live in [-1,1].
// Train and validation blocks are contiguous (train first), class-balanced
// within each split.
template <class S>
struct DatasetT {
    TensorT<S> images;  // [N,C,H,W]
    std::vector<int32_t> labels;
    int64_t classes = 0;
    int64_t train_count = 0;
    int64_t val_count = 0;
    std::vector<std::string> class_names;
    std::vector<double> channel_mean;
    std::vector<double> channel_std;

    int64_t count() const { return images.defined() ? images.dim(0) : 0; }
    int64_t image_size() const { return images.dim(2); }
    int64_t channels() const { return images.dim(1); }

    std::vector<int64_t> train_indices_of_class(int64_t c) const {
        std::vector<int64_t> out;
        for (int64_t i = 0; i < train_count; ++i) {
            if (labels[static_cast<size_t>(i)] == c) out.push_back(i);
        }
        return out;
    }

    template <class T>
    DatasetT<T> cast() const {
        DatasetT<T> out;
        out.images = images.template cast<T>();
        out.labels = labels;
        out.classes = classes;
        out.train_count = train_count;
        out.val_count = val_count;
        out.class_names = class_names;
        out.channel_mean = channel_mean;
        out.channel_std = channel_std;
        return out;
    }
};

using Dataset = DatasetT<double>;

namespace glyph {

struct Vec2 {
    double x, y;
};

inline double sdf_box(Vec2 p, double bx, double by) {
    const double qx = std::abs(p.x) - bx;
    const double qy = std::abs(p.y) - by;
    const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

inline double sdf_circle(Vec2 p, double cx, double cy, double r) {
    const double dx = p.x - cx, dy = p.y - cy;
    return std::sqrt(dx * dx + dy * dy) - r;
}

inline double sdf_triangle(Vec2 p, double r) {
    const double k = std::sqrt(3.0);
    double px = std::abs(p.x) - r;
    double py = p.y + r / k;
    if (px + k * py > 0.0) {
        const double nx = (px - k * py) / 2.0;
        const double ny = (-k * px - py) / 2.0;
        px = nx;
        py = ny;
    }
    px -= std::clamp(px, -2.0 * r, 0.0);
    const double len = std::sqrt(px * px + py * py);
    return -len * (py < 0.0 ? -1.0 : 1.0);
}

// signed distance per glyph kind; `jitter` gives blob its per-image wobble
inline double sdf(int kind, Vec2 q, const std::array<double, 6>& jitter) {
    switch (kind) {
        case 0:  // circle
            return sdf_circle(q, 0, 0, 0.55);
        case 1:  // cross
            return std::min(sdf_box(q, 0.18, 0.62), sdf_box(q, 0.62, 0.18));
        case 2: {  // bars
            double d = 1e9;
            for (double dy : {-0.45, 0.0, 0.45}) d = std::min(d, sdf_box({q.x, q.y - dy}, 0.6, 0.11));
            return d;
        }
        case 3:  // triangle
            return sdf_triangle(q, 0.62);
        case 4:  // ring
            return std::abs(sdf_circle(q, 0, 0, 0.48)) - 0.12;
        case 5: {  // checker
            const double box = sdf_box(q, 0.7, 0.7);
            if (box > 0.0) return box;
            const int cx = static_cast<int>(std::floor((q.x + 0.7) / 0.35));
            const int cy = static_cast<int>(std::floor((q.y + 0.7) / 0.35));
            return (cx + cy) % 2 == 0 ? -0.05 : 0.05;
        }
        case 6: {  // wedge
            const double r = std::sqrt(q.x * q.x + q.y * q.y);
            const double ang = std::abs(std::atan2(q.y, q.x));
            return std::max(r - 0.65, ang * 0.55 - 0.5);
        }
        case 7: {  // dot grid
            double d = 1e9;
            for (double oy : {-0.45, 0.0, 0.45}) {
                for (double ox : {-0.45, 0.0, 0.45}) d = std::min(d, sdf_circle(q, ox, oy, 0.13));
            }
            return d;
        }
        case 8: {  // diagonals
            const double inv = 1.0 / std::sqrt(2.0);
            const double d1 = std::abs(q.x - q.y) * inv - 0.12;
            const double d2 = std::abs(q.x + q.y) * inv - 0.12;
            return std::max(std::min(d1, d2), sdf_box(q, 0.72, 0.72));
        }
        default: {  // blob
            double d = 1e9;
            d = std::min(d, sdf_circle(q, -0.2 + jitter[0], -0.15 + jitter[1], 0.3));
            d = std::min(d, sdf_circle(q, 0.25 + jitter[2], 0.05 + jitter[3], 0.26));
            d = std::min(d, sdf_circle(q, jitter[4], 0.3 + jitter[5], 0.24));
            return d;
        }
    }
}

inline const std::vector<std::string>& names() {
    static const std::vector<std::string> v{"circle", "cross",  "bars",     "triangle", "ring",
                                            "checker", "wedge", "dot-grid", "diagonal", "blob"};
    return v;
}

}  // namespace glyph

template <class S = double>
DatasetT<S> gen_glyph_dataset(int64_t classes, int64_t per_class, int64_t size, uint64_t seed) {
    require(classes >= 2 && classes <= 10, "gen_glyph_dataset: classes must be in [2,10], got ", classes);
    require(size == 16 || size == 32 || size == 64, "gen_glyph_dataset: size must be 16, 32 or 64, got ", size);
    require(per_class >= 5, "gen_glyph_dataset: need at least 5 images per class");
    const int64_t train_pc = per_class * 4 / 5;
    const int64_t val_pc = per_class - train_pc;
    const int64_t c = 3;
    const int64_t n = classes * per_class;

    // render into f32 so the GLADDATA round trip is exact
    std::vector<float> pixels(static_cast<size_t>(n * c * size * size));
    std::vector<int32_t> labels(static_cast<size_t>(n));

    const double edge = 3.0 / static_cast<double>(size);
    auto render = [&](int64_t row, int64_t cls, int64_t item) {
        Rng rng(seed_chain(seed, 0x676c797068ull, static_cast<uint64_t>(cls), static_cast<uint64_t>(item)));
        const double theta = rng.uniform(-15.0, 15.0) * M_PI / 180.0;
        const double sc = rng.uniform(0.85, 1.15);
        const double tx = rng.uniform(-0.12, 0.12);
        const double ty = rng.uniform(-0.12, 0.12);
        std::array<double, 3> fg, bg;
        for (auto& v : fg) v = rng.uniform(0.15, 0.95);
        for (auto& v : bg) v = rng.uniform(-0.95, -0.15);
        std::array<double, 6> jitter;
        for (auto& v : jitter) v = rng.uniform(-0.15, 0.15);
        const double ct = std::cos(theta), st = std::sin(theta);

        for (int64_t y = 0; y < size; ++y) {
            for (int64_t x = 0; x < size; ++x) {
                const double u = -1.0 + 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(size);
                const double v = -1.0 + 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(size);
                glyph::Vec2 q{(ct * (u - tx) + st * (v - ty)) / sc, (-st * (u - tx) + ct * (v - ty)) / sc};
                const double d = glyph::sdf(static_cast<int>(cls), q, jitter);
                const double alpha = std::clamp(0.5 - d / edge, 0.0, 1.0);
                for (int64_t ch = 0; ch < 3; ++ch) {
                    const double noise = rng.normal(0.0, 0.08);
                    const double val = std::clamp(bg[ch] + alpha * (fg[ch] - bg[ch]) + noise, -1.0, 1.0);
                    pixels[((row * 3 + ch) * size + y) * size + x] = static_cast<float>(val);
                }
            }
        }
        labels[static_cast<size_t>(row)] = static_cast<int32_t>(cls);
    };

    // train block (class-major), then val block
    int64_t row = 0;
    for (int64_t cls = 0; cls < classes; ++cls) {
        for (int64_t i = 0; i < train_pc; ++i) render(row++, cls, i);
    }
    for (int64_t cls = 0; cls < classes; ++cls) {
        for (int64_t i = 0; i < val_pc; ++i) render(row++, cls, train_pc + i);
    }

    DatasetT<S> ds;
    std::vector<S> wide(pixels.begin(), pixels.end());
    ds.images = TensorT<S>::from({n, c, size, size}, std::move(wide));
    ds.labels = std::move(labels);
    ds.classes = classes;
    ds.train_count = classes * train_pc;
    ds.val_count = classes * val_pc;
    ds.class_names.assign(glyph::names().begin(), glyph::names().begin() + classes);

    ds.channel_mean.assign(3, 0.0);
    ds.channel_std.assign(3, 0.0);
    const int64_t per_ch = n * size * size;
    for (int64_t ch = 0; ch < 3; ++ch) {
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const float* plane = pixels.data() + (i * 3 + ch) * size * size;
            for (int64_t j = 0; j < size * size; ++j) {
                s1 += plane[j];
                s2 += static_cast<double>(plane[j]) * plane[j];
            }
        }
        ds.channel_mean[ch] = s1 / static_cast<double>(per_ch);
        ds.channel_std[ch] = std::sqrt(std::max(0.0, s2 / static_cast<double>(per_ch) -
                                                          ds.channel_mean[ch] * ds.channel_mean[ch]));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// GLADDATA container (docs/formats.md has the byte map)
// ---------------------------------------------------------------------------

template <class S>
void save_dataset(const DatasetT<S>& ds, const std::filesystem::path& path) {
    BlobWriter w;
    w.magic("GLADDATA", 1);
    w.u32(static_cast<uint32_t>(ds.classes));
    w.u64(static_cast<uint64_t>(ds.count()));
    w.u32(static_cast<uint32_t>(ds.channels()));
    w.u32(static_cast<uint32_t>(ds.images.dim(2)));
    w.u32(static_cast<uint32_t>(ds.images.dim(3)));
    w.u64(static_cast<uint64_t>(ds.train_count));
    w.u64(static_cast<uint64_t>(ds.val_count));
    for (int64_t ch = 0; ch < ds.channels(); ++ch) {
        w.f64(ds.channel_mean[static_cast<size_t>(ch)]);
        w.f64(ds.channel_std[static_cast<size_t>(ch)]);
    }
    w.u32(static_cast<uint32_t>(ds.class_names.size()));
    for (const auto& name : ds.class_names) w.str(name);
    for (int32_t l : ds.labels) w.u16(static_cast<uint16_t>(l));
    std::vector<float> pix(static_cast<size_t>(ds.images.numel()));
    for (int64_t i = 0; i < ds.images.numel(); ++i) pix[i] = static_cast<float>(ds.images.data()[i]);
    w.f32_array(pix.data(), pix.size());
    w.save(path);
}

template <class S = double>
DatasetT<S> load_dataset(const std::filesystem::path& path) {
    auto r = BlobReader::load(path);
    r.magic("GLADDATA", 1);
    DatasetT<S> ds;
    ds.classes = r.u32();
    const int64_t n = static_cast<int64_t>(r.u64());
    const int64_t c = r.u32();
    const int64_t h = r.u32();
    const int64_t w = r.u32();
    ds.train_count = static_cast<int64_t>(r.u64());
    ds.val_count = static_cast<int64_t>(r.u64());
    require(ds.train_count + ds.val_count == n, path.string(), ": split sizes ", ds.train_count, "+",
            ds.val_count, " != ", n);
    ds.channel_mean.resize(static_cast<size_t>(c));
    ds.channel_std.resize(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
        ds.channel_mean[static_cast<size_t>(ch)] = r.f64();
        ds.channel_std[static_cast<size_t>(ch)] = r.f64();
    }
    const uint32_t names = r.u32();
    for (uint32_t i = 0; i < names; ++i) ds.class_names.push_back(r.str());
    ds.labels.resize(static_cast<size_t>(n));
    for (auto& l : ds.labels) {
        l = static_cast<int32_t>(r.u16());
        require(l >= 0 && l < ds.classes, path.string(), ": label out of range");
    }
    auto pix = r.f32_array();
    r.expect_end();
    require(static_cast<int64_t>(pix.size()) == n * c * h * w, path.string(), ": pixel payload size mismatch");
    std::vector<S> wide(pix.begin(), pix.end());
    ds.images = TensorT<S>::from({n, c, h, w}, std::move(wide));
    return ds;
}

// ---------------------------------------------------------------------------
// PPM (P6) image grid export
// ---------------------------------------------------------------------------

// [-1,1] -> byte via round-half-up of (v+1)/2*255; 0 maps to 128.
inline uint8_t quantize_unit(double v) {
    const double scaled = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    return static_cast<uint8_t>(std::clamp(std::floor(scaled + 0.5), 0.0, 255.0));
}

// Tiles images row-major with 2-px white separators (and a 2-px border).
// k images in c columns: width = c*(W+2)+2 px, height = rows*(H+2)+2 px.
template <class S>
void export_image_grid(const TensorT<S>& images, const std::filesystem::path& path, int64_t columns) {
    require(images.rank() == 4, "export_image_grid: need [k,C,H,W], got ", shape_str(images.shape()));
    const int64_t k = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    require(c == 1 || c == 3, "export_image_grid: 1 or 3 channels, got ", c);
    require(columns >= 1, "export_image_grid: columns must be >= 1");
    const int64_t cols = std::min(columns, k);
    const int64_t rows = (k + cols - 1) / cols;
    const int64_t out_w = cols * (w + 2) + 2;
    const int64_t out_h = rows * (h + 2) + 2;

    std::vector<uint8_t> rgb(static_cast<size_t>(out_w * out_h * 3), 255);
    for (int64_t i = 0; i < k; ++i) {
        const int64_t gy = i / cols, gx = i % cols;
        const int64_t oy = 2 + gy * (h + 2), ox = 2 + gx * (w + 2);
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                for (int64_t ch = 0; ch < 3; ++ch) {
                    const int64_t src_ch = c == 1 ? 0 : ch;
                    const double v = static_cast<double>(images.data()[((i * c + src_ch) * h + y) * w + x]);
                    rgb[((oy + y) * out_w + ox + x) * 3 + ch] = quantize_unit(v);
                }
            }
        }
    }

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "export_image_grid: cannot open '", path.string(), "'");
    out << "P6\n" << out_w << " " << out_h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    require(out.good(), "export_image_grid: write failed for '", path.string(), "'");
}

}  // namespace glad
