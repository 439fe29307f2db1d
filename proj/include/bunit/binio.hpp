#pragma once

#include "bunit/errors.hpp"

#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace bunit {

// Explicit little-endian primitives so artifact files are byte-identical
// regardless of host conventions.
class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void u8(uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
        out_.write(b, 4);
    }
    void u64(uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
        out_.write(b, 8);
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void magic(const char tag[8]) { out_.write(tag, 8); }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in, std::string context = {})
        : in_(in), context_(std::move(context)) {}

    uint8_t u8() {
        char c;
        get(&c, 1);
        return static_cast<uint8_t>(c);
    }
    uint32_t u32() {
        char b[4];
        get(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<uint8_t>(b[i])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        char b[8];
        get(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(static_cast<uint8_t>(b[i])) << (8 * i);
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        if (n > (1ULL << 32)) throw IoError("corrupt string length in " + context_);
        std::string s(n, '\0');
        if (n > 0) get(s.data(), n);
        return s;
    }
    void expect_magic(const char tag[8]) {
        char b[8];
        get(b, 8);
        if (std::memcmp(b, tag, 8) != 0)
            throw IoError("bad file magic in " + context_ + " (expected " + std::string(tag, 8) + ")");
    }

private:
    void get(char* dst, size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw IoError("unexpected end of file in " + context_);
    }

    std::istream& in_;
    std::string context_;
};

// Writes through a temp file and renames into place so an interrupted stage
// never leaves a half-written artifact at the final path.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

namespace detail {
void atomic_write_impl(const std::string& path, const std::function<void(std::ostream&)>& fill);
}

template <typename Fn>
void atomic_write_stream(const std::string& path, Fn&& fill) {
    detail::atomic_write_impl(path, std::function<void(std::ostream&)>(std::forward<Fn>(fill)));
}

} // namespace bunit
