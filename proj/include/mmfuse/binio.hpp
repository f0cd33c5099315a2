#pragma once

// Little-endian binary stream helpers shared by the on-disk formats.
// Byte order is pinned explicitly; readers throw FormatError on truncation.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "mmfuse/errors.hpp"

namespace mmfuse::binio {

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_f32(std::ostream& os, float v) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::ostream& os, double v) {
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void read_exact(std::istream& is, char* buf, std::size_t n, const char* what) {
    is.read(buf, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw FormatError(std::string("truncated stream while reading ") + what);
    }
}

inline std::uint8_t get_u8(std::istream& is, const char* what = "u8") {
    char b;
    read_exact(is, &b, 1, what);
    return static_cast<std::uint8_t>(b);
}

inline std::uint16_t get_u16(std::istream& is, const char* what = "u16") {
    char b[2];
    read_exact(is, b, 2, what);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[0]) |
                                      (static_cast<std::uint16_t>(static_cast<unsigned char>(b[1])) << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what = "u32") {
    char b[4];
    read_exact(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what = "u64") {
    char b[8];
    read_exact(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is, const char* what = "f32") {
    return std::bit_cast<float>(get_u32(is, what));
}

inline double get_f64(std::istream& is, const char* what = "f64") {
    return std::bit_cast<double>(get_u64(is, what));
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) {
    os.write(magic, 4);
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4];
    read_exact(is, got, 4, "magic");
    for (int i = 0; i < 4; ++i) {
        if (got[i] != magic[i]) {
            throw FormatError(std::string("bad magic, expected ") + magic);
        }
    }
}

}  // namespace mmfuse::binio
