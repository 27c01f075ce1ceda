#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "cace/tensor.hpp"

// Little-endian POD streaming used by the checkpoint and memory formats.
namespace cace::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error("unexpected end of binary stream");
    return value;
}

template <typename T>
void put_array(std::ostream& out, const std::vector<T>& values) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
std::vector<T> get_array(std::istream& in, std::size_t count) {
    if (count > (std::size_t{1} << 32)) throw Error("binary stream array length is implausible");
    std::vector<T> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw Error("unexpected end of binary stream");
    return values;
}

inline void put_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const char* what) {
    char buf[8] = {};
    in.read(buf, 8);
    if (!in || std::string(buf, 8) != std::string(magic, 8)) throw Error(std::string("not a ") + what + " file");
}

}  // namespace cace::binio
