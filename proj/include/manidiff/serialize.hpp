#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "manidiff/errors.hpp"
#include "manidiff/rng.hpp"

// Little-endian binary primitives shared by the checkpoint, dataset and
// sequence file formats. Bytes are written explicitly so the layouts are
// host-order independent.

namespace manidiff::io {

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw FileNotFound("cannot open for writing: " + path);
    }

    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    void u8(uint8_t v) { bytes(&v, 1); }

    void u32(uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 4);
    }

    void u64(uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 8);
    }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void magic(const char m[4]) { bytes(m, 4); }

    void mat(const Eigen::MatrixXd& m) {
        u32(static_cast<uint32_t>(m.rows()));
        u32(static_cast<uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
};

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw FileNotFound("cannot open: " + p);
    }

    void bytes(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n) throw ParseError("truncated file: " + path);
    }

    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }

    uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }

    uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void expect_magic(const char m[4]) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, m, 4) != 0) throw ParseError("bad magic in " + path);
    }

    std::string str(uint32_t max_len = 1u << 24) {
        uint32_t n = u32();
        if (n > max_len) throw ParseError("string length out of range in " + path);
        std::string s(n, '\0');
        if (n > 0) bytes(s.data(), n);
        return s;
    }

    Eigen::MatrixXd mat(uint32_t max_elems = 1u << 26) {
        uint32_t r = u32(), c = u32();
        if (static_cast<uint64_t>(r) * c > max_elems) throw ParseError("matrix too large in " + path);
        Eigen::MatrixXd m(r, c);
        for (uint32_t i = 0; i < r; ++i)
            for (uint32_t j = 0; j < c; ++j) m(i, j) = f64();
        return m;
    }
};

inline uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("cannot open: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
        if (in.eof()) break;
    }
    return h;
}

}  // namespace manidiff::io
