#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "glad/datakit.hpp"
#include "glad/tensor/ops.hpp"

using namespace glad;

namespace {

std::vector<uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("gen_glyph_dataset: deterministic and correctly split") {
    auto a = gen_glyph_dataset(10, 10, 16, 3);
    auto b = gen_glyph_dataset(10, 10, 16, 3);
    CHECK(bitwise_equal(a.images, b.images));
    CHECK(a.labels == b.labels);

    CHECK(a.train_count == 80);
    CHECK(a.val_count == 20);
    CHECK(a.count() == 100);
    // exact class balance in each split
    for (int64_t split = 0; split < 2; ++split) {
        const int64_t lo = split == 0 ? 0 : a.train_count;
        const int64_t hi = split == 0 ? a.train_count : a.count();
        std::vector<int64_t> counts(10, 0);
        for (int64_t i = lo; i < hi; ++i) counts[static_cast<size_t>(a.labels[i])]++;
        for (int64_t c = 1; c < 10; ++c) CHECK(counts[c] == counts[0]);
    }

    auto c = gen_glyph_dataset(10, 10, 16, 4);
    CHECK_FALSE(bitwise_equal(a.images, c.images));
}

TEST_CASE("gen_glyph_dataset: split arithmetic at the documented scale") {
    auto ds = gen_glyph_dataset(10, 20, 16, 1);
    CHECK(ds.train_count == 160);
    CHECK(ds.val_count == 40);
    // 500 per class -> 4000 train + 1000 val (computed, not rendered, here)
    CHECK(500 * 4 / 5 * 10 == 4000);
}

TEST_CASE("gen_glyph_dataset: pixels live in [-1,1] and classes look distinct") {
    auto ds = gen_glyph_dataset(4, 10, 32, 7);
    CHECK(max_abs(ds.images) <= 1.0);
    // mean image of different classes should differ clearly
    const int64_t hw = 32 * 32 * 3;
    std::vector<double> mean0(hw, 0.0), mean1(hw, 0.0);
    int64_t n0 = 0, n1 = 0;
    for (int64_t i = 0; i < ds.train_count; ++i) {
        auto* dst = ds.labels[i] == 0 ? mean0.data() : ds.labels[i] == 1 ? mean1.data() : nullptr;
        if (!dst) continue;
        (ds.labels[i] == 0 ? n0 : n1)++;
        for (int64_t j = 0; j < hw; ++j) dst[j] += ds.images.data()[i * hw + j];
    }
    double dist = 0.0;
    for (int64_t j = 0; j < hw; ++j) {
        const double d = mean0[j] / n0 - mean1[j] / n1;
        dist += d * d;
    }
    CHECK(std::sqrt(dist / hw) > 0.05);
}

TEST_CASE("gen_glyph_dataset: rejects unsupported sizes and class counts") {
    CHECK_THROWS_AS(gen_glyph_dataset(10, 10, 24, 0), Error);
    CHECK_THROWS_AS(gen_glyph_dataset(1, 10, 16, 0), Error);
    CHECK_THROWS_AS(gen_glyph_dataset(11, 10, 16, 0), Error);
}

TEST_CASE("GLADDATA: round trip is byte-exact") {
    auto ds = gen_glyph_dataset(3, 10, 16, 9);
    const auto p1 = std::filesystem::temp_directory_path() / "glad_data_a.bin";
    const auto p2 = std::filesystem::temp_directory_path() / "glad_data_b.bin";
    save_dataset(ds, p1);
    auto loaded = load_dataset(p1);
    CHECK(bitwise_equal(loaded.images, ds.images));
    CHECK(loaded.labels == ds.labels);
    CHECK(loaded.class_names == ds.class_names);
    CHECK(loaded.channel_mean == ds.channel_mean);
    save_dataset(loaded, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("GLADDATA: file size follows header arithmetic") {
    auto ds = gen_glyph_dataset(2, 5, 16, 2);
    const auto p = std::filesystem::temp_directory_path() / "glad_data_c.bin";
    save_dataset(ds, p);
    const auto bytes = file_bytes(p);
    size_t names_len = 0;
    for (const auto& n : ds.class_names) names_len += 4 + n.size();
    const size_t expected = 8 + 4                       // magic + version
                            + 4 + 8 + 4 + 4 + 4 + 8 + 8 // counts and dims
                            + 3 * 16                    // channel stats
                            + 4 + names_len             // class names
                            + 2 * static_cast<size_t>(ds.count())           // labels u16
                            + 8 + 4 * static_cast<size_t>(ds.images.numel());  // pixel array
    CHECK(bytes.size() == expected);
    std::filesystem::remove(p);
}

TEST_CASE("GLADDATA: corruption is rejected without partial data") {
    auto ds = gen_glyph_dataset(2, 5, 16, 2);
    const auto p = std::filesystem::temp_directory_path() / "glad_data_d.bin";
    save_dataset(ds, p);
    auto bytes = file_bytes(p);

    {  // truncated
        std::ofstream out(p, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_dataset(p), Error);

    {  // bad magic
        auto corrupt = bytes;
        corrupt[3] = 'X';
        std::ofstream out(p, std::ios::binary);
        out.write(reinterpret_cast<const char*>(corrupt.data()), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("magic"), Error);
    std::filesystem::remove(p);
}

TEST_CASE("quantize_unit: documented rounding rule") {
    CHECK(quantize_unit(-1.0) == 0);
    CHECK(quantize_unit(1.0) == 255);
    CHECK(quantize_unit(0.0) == 128);  // 127.5 rounds half-up
    CHECK(quantize_unit(-5.0) == 0);   // clamped
    CHECK(quantize_unit(5.0) == 255);
}

TEST_CASE("export_image_grid: constant white image and layout arithmetic") {
    const auto p = std::filesystem::temp_directory_path() / "glad_grid.ppm";
    export_image_grid(Tensor::full({1, 3, 2, 2}, 1.0), p, 1);
    auto bytes = file_bytes(p);
    const std::string header = "P6\n6 6\n255\n";  // 1*(2+2)+2 = 6
    CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
    for (size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 255);
    CHECK(bytes.size() == header.size() + 6 * 6 * 3);

    // k=5 images in 3 columns -> width 3*(W+2)+2, two rows
    export_image_grid(Tensor::full({5, 3, 4, 4}, 0.0), p, 3);
    auto bytes2 = file_bytes(p);
    const std::string header2 = "P6\n20 14\n255\n";
    CHECK(std::string(bytes2.begin(), bytes2.begin() + header2.size()) == header2);
    std::filesystem::remove(p);
}

TEST_CASE("export_image_grid: deterministic bytes") {
    auto ds = gen_glyph_dataset(3, 5, 16, 5);
    const auto p1 = std::filesystem::temp_directory_path() / "glad_grid_a.ppm";
    const auto p2 = std::filesystem::temp_directory_path() / "glad_grid_b.ppm";
    export_image_grid(slice_axis0(ds.images, 0, 6), p1, 3);
    export_image_grid(slice_axis0(ds.images, 0, 6), p2, 3);
    CHECK(file_bytes(p1) == file_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
