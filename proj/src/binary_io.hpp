#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "kwspot/error.hpp"

namespace kwspot::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void put_f32(std::ostream& os, double v) { put<float>(os, static_cast<float>(v)); }

template <typename T>
T get(std::istream& is, const std::string& what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError("truncated " + what);
    }
    return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError(what + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
}

}  // namespace kwspot::io
