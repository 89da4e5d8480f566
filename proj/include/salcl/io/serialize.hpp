#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "salcl/core/error.hpp"
#include "salcl/core/tensor.hpp"

namespace salcl::io {

// Little-endian binary container primitives. All checkpoint formats are
// written through these so round-trips are bit-exact and files are portable
// across builds on the same-endianness hosts this toolkit targets.

class BinWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void magic(const char m[8]) { buf_.insert(buf_.end(), m, m + 8); }

    template <typename T>
    void tensor(const Tensor<T>& t) {
        u32(static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) i64(t.dim(i));
        for (int64_t i = 0; i < t.numel(); ++i) {
            if constexpr (sizeof(T) == 4)
                f32(static_cast<float>(t[i]));
            else
                f64(static_cast<double>(t[i]));
        }
    }

    const std::vector<uint8_t>& bytes() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<long>(buf_.size()));
        if (!f) throw IoError("write failed for '" + path + "'");
    }

private:
    std::vector<uint8_t> buf_;
};

class BinReader {
public:
    explicit BinReader(std::vector<uint8_t> bytes) : buf_(std::move(bytes)) {}

    static BinReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "'");
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
        return BinReader(std::move(bytes));
    }

    uint8_t u8() { return take(1)[0]; }
    uint32_t u32() {
        const uint8_t* p = take(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        const uint8_t* p = take(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        const uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    void expect_magic(const char m[8]) {
        const uint8_t* p = take(8);
        if (std::memcmp(p, m, 8) != 0) throw IoError("bad file magic (wrong file type?)");
    }

    template <typename T>
    Tensor<T> tensor() {
        const uint32_t rank = u32();
        if (rank > 8) throw IoError("corrupt tensor rank");
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = i64();
        Tensor<T> t(shape);
        for (int64_t i = 0; i < t.numel(); ++i) {
            if constexpr (sizeof(T) == 4)
                t[i] = static_cast<T>(f32());
            else
                t[i] = static_cast<T>(f64());
        }
        return t;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    const uint8_t* take(size_t n) {
        if (pos_ + n > buf_.size()) throw IoError("unexpected end of file");
        const uint8_t* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
};

} // namespace salcl::io
