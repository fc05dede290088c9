#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mmrec/error.hpp"

namespace mmrec {

// Little-endian primitives over iostreams. The in-memory byte order on every
// supported target is already little-endian; memcpy keeps the aliasing legal.

inline void write_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    os.write(b, 8);
}

inline void write_f32(std::ostream& os, float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

inline uint8_t read_u8(std::istream& is, const char* what) {
    int c = is.get();
    if (c == std::char_traits<char>::eof())
        throw Error(ErrorKind::format, std::string("unexpected end of file reading ") + what);
    return static_cast<uint8_t>(c);
}

inline void read_bytes(std::istream& is, char* dst, size_t n, const char* what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw Error(ErrorKind::format, std::string("unexpected end of file reading ") + what);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    char b[4];
    read_bytes(is, b, 4, what);
    uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

inline uint64_t read_u64(std::istream& is, const char* what) {
    char b[8];
    read_bytes(is, b, 8, what);
    uint64_t v;
    std::memcpy(&v, b, 8);
    return v;
}

inline float read_f32(std::istream& is, const char* what) {
    char b[4];
    read_bytes(is, b, 4, what);
    float v;
    std::memcpy(&v, b, 4);
    return v;
}

inline std::string read_str(std::istream& is, uint32_t len, const char* what) {
    std::string s(len, '\0');
    if (len) read_bytes(is, s.data(), len, what);
    return s;
}

inline std::ofstream open_out_binary(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot open for reading: " + path);
    return is;
}

}  // namespace mmrec
