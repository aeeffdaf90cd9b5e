#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hsi::npy {

/// Raw contents of a C-ordered NPY array.
struct Array {
    std::string descr;  ///< numpy dtype string, e.g. "<f8"
    std::vector<std::size_t> shape;
    std::vector<unsigned char> bytes;

    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] std::size_t item_size() const;
};

/// Parses NPY format 1.0 (2.0 headers are accepted too). Rejects
/// fortran-ordered and big-endian arrays. Throws DataError naming the path.
[[nodiscard]] Array read(const std::filesystem::path& path);
[[nodiscard]] Array parse(const std::vector<unsigned char>& file, const std::string& origin);

/// Serialized NPY 1.0 bytes for a C-ordered array.
[[nodiscard]] std::vector<unsigned char> serialize(const Array& a);

/// Element values widened to double. Supports <f4, <f8, |u1, <u2, <u4, <i4, <i8.
[[nodiscard]] std::vector<double> as_doubles(const Array& a, const std::string& origin);

[[nodiscard]] Array from_doubles(std::vector<std::size_t> shape, const std::vector<double>& values);
[[nodiscard]] Array from_floats(std::vector<std::size_t> shape, const std::vector<double>& values);
[[nodiscard]] Array from_u16(std::vector<std::size_t> shape, const std::vector<std::uint16_t>& values);

}  // namespace hsi::npy
