#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "glad/core/error.hpp"

// Little-endian binary container shared by all artifact formats. Each file
// starts with an 8-byte magic and a u32 version; payloads are fixed-width
// scalars, so the formats are documented byte-by-byte (see docs/formats.md).

static_assert(std::endian::native == std::endian::little,
              "artifact containers are little-endian; big-endian hosts are unsupported");

namespace glad {

class BlobWriter {
public:
    void magic(const char (&m)[9], uint32_t version) {
        bytes_.insert(bytes_.end(), m, m + 8);
        u32(version);
    }

    void u16(uint16_t v) { raw(&v, sizeof v); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void i64(int64_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    void shape(const std::vector<int64_t>& s) {
        u32(static_cast<uint32_t>(s.size()));
        for (int64_t d : s) i64(d);
    }

    void f64_array(const double* p, size_t n) {
        u64(n);
        raw(p, n * sizeof(double));
    }

    void f32_array(const float* p, size_t n) {
        u64(n);
        raw(p, n * sizeof(float));
    }

    const std::vector<uint8_t>& bytes() const { return bytes_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        require(out.good(), "cannot open '", path.string(), "' for writing");
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        require(out.good(), "write failed for '", path.string(), "'");
    }

private:
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }

    std::vector<uint8_t> bytes_;
};

class BlobReader {
public:
    explicit BlobReader(std::vector<uint8_t> bytes, std::string origin = "<memory>")
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    static BlobReader load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        require(in.good(), "cannot open '", path.string(), "'");
        const auto size = in.tellg();
        in.seekg(0);
        std::vector<uint8_t> bytes(static_cast<size_t>(size));
        in.read(reinterpret_cast<char*>(bytes.data()), size);
        require(in.good(), "read failed for '", path.string(), "'");
        return BlobReader(std::move(bytes), path.string());
    }

    uint32_t magic(const char (&expected)[9], uint32_t max_version) {
        char m[8];
        raw(m, 8);
        require(std::memcmp(m, expected, 8) == 0, origin_, ": bad magic, expected '", expected, "'");
        const uint32_t v = u32();
        require(v >= 1 && v <= max_version, origin_, ": unsupported version ", v);
        return v;
    }

    uint16_t u16() { return read<uint16_t>(); }
    uint32_t u32() { return read<uint32_t>(); }
    uint64_t u64() { return read<uint64_t>(); }
    int64_t i64() { return read<int64_t>(); }
    float f32() { return read<float>(); }
    double f64() { return read<double>(); }

    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    std::vector<int64_t> shape() {
        const uint32_t n = u32();
        require(n <= 16, origin_, ": implausible rank ", n);
        std::vector<int64_t> s(n);
        for (auto& d : s) d = i64();
        return s;
    }

    std::vector<double> f64_array() {
        const uint64_t n = u64();
        require(n * sizeof(double) <= remaining(), origin_, ": truncated f64 array");
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }

    std::vector<float> f32_array() {
        const uint64_t n = u64();
        require(n * sizeof(float) <= remaining(), origin_, ": truncated f32 array");
        std::vector<float> v(n);
        raw(v.data(), n * sizeof(float));
        return v;
    }

    size_t remaining() const { return bytes_.size() - pos_; }

    void expect_end() const {
        require(remaining() == 0, origin_, ": ", remaining(), " trailing bytes");
    }

private:
    template <class T>
    T read() {
        T v;
        raw(&v, sizeof v);
        return v;
    }

    void raw(void* p, size_t n) {
        require(pos_ + n <= bytes_.size(), origin_, ": truncated (need ", n, " bytes at offset ", pos_, ")");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::vector<uint8_t> bytes_;
    size_t pos_ = 0;
    std::string origin_;
};

// FNV-1a over raw bytes; identifies generator weights inside distilled sets.
inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace glad
