#pragma once

// STF1 tensor files:
//   "STF1" | u32 rank | rank x u32 dims | f32 payload
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg::stf {

inline constexpr std::array<char, 4> magic{'S', 'T', 'F', '1'};

namespace detail {

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

} // namespace detail

/// Serializes to the exact on-disk byte sequence.
inline std::vector<char> encode(const Tensor& t) {
    if (t.data.size() != t.element_count())
        throw PayloadError("encode: payload has " + std::to_string(t.data.size()) + " floats, dims imply " +
                           std::to_string(t.element_count()));
    std::vector<char> out(magic.begin(), magic.end());
    out.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims)
        detail::put_u32(out, d);
    for (float f : t.data)
        detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

inline Tensor decode(const std::vector<char>& bytes) {
    if (bytes.size() < 8 || !std::equal(magic.begin(), magic.end(), bytes.begin()))
        throw FormatError("not an STF1 file (bad magic)");
    const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
    const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header)
        throw PayloadError("STF1 header truncated");
    Tensor t;
    t.dims.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
        t.dims[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
    const std::size_t count = t.element_count();
    if (bytes.size() - header != 4 * count)
        throw PayloadError("STF1 payload is " + std::to_string(bytes.size() - header) + " bytes, dims imply " +
                           std::to_string(4 * count));
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        t.data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + header + 4 * i));
    return t;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed: " + path.string());
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open for reading: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode(t)); }

inline Tensor read_tensor(const std::filesystem::path& path) { return decode(read_bytes(path)); }

} // namespace noisyseg::stf
