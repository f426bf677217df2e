#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fade/errors.hpp"

namespace fade {

// Little-endian binary IO. All file formats in this project are LE; these
// helpers assume a little-endian host (asserted in binary_io_selftest()).

struct BinWriter {
    std::ofstream out;
    explicit BinWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IoError("cannot open for writing: " + path);
    }
    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    template <typename T>
    void pod(T v) { bytes(&v, sizeof(T)); }
    void str(const std::string& s) {
        pod<uint32_t>(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    template <typename T>
    void vec(const std::vector<T>& v) { bytes(v.data(), v.size() * sizeof(T)); }
    void close() {
        out.close();
        if (!out) throw IoError("write failed");
    }
};

struct BinReader {
    std::ifstream in;
    explicit BinReader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw IoError("cannot open for reading: " + path);
    }
    void bytes(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n) throw IoError("unexpected end of file");
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::string str() {
        const uint32_t n = pod<uint32_t>();
        if (n > (1u << 20)) throw IoError("corrupt string length");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    template <typename T>
    std::vector<T> vec(size_t n) {
        std::vector<T> v(n);
        bytes(v.data(), n * sizeof(T));
        return v;
    }
};

inline bool host_is_little_endian() {
    const uint32_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

// Deterministic float formatting for CSV output.
inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// 8-bit binary PGM (P5).
void write_pgm(const std::string& path, const std::vector<float>& pix, int w, int h);
std::vector<float> read_pgm(const std::string& path, int* w_out, int* h_out);

// Tile a list of equally sized images into one sheet with 1px separators.
std::vector<float> tile_images(const std::vector<std::vector<float>>& imgs, int img_w, int img_h,
                               int cols, int* sheet_w, int* sheet_h);

// FNV-1a over arbitrary bytes, used to fingerprint datasets and configs.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << body;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace fade
