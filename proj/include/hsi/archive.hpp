#pragma once

// Binary container for named float64 arrays plus a JSON manifest:
//   8 bytes  "HSIARCH1"
//   u64 LE   manifest length in bytes
//   manifest UTF-8 JSON {"meta": {...}, "arrays": [{"name", "shape", "offset"}]}
//   payload  every array as little-endian f64, row-major, in manifest order;
//            "offset" counts doubles from the start of the payload.

#include <filesystem>
#include <string>
#include <vector>

#include "hsi/sdtn.hpp"
#include "hsi/tensor.hpp"
#include "json.hpp"

namespace hsi::archive {

struct Entry {
    std::string name;
    DenseTensor value;
};

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<Entry> arrays;

    void put(std::string name, DenseTensor value);
    void put(std::string name, const Matrix& m);
    /// Throws DataError when missing.
    [[nodiscard]] const DenseTensor& get(const std::string& name) const;
    [[nodiscard]] Matrix get_matrix(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const;
};

[[nodiscard]] std::vector<unsigned char> serialize(const Archive& a);
/// Throws DataError (prefixed with `origin`) on any malformed content.
[[nodiscard]] Archive parse(const std::vector<unsigned char>& bytes, const std::string& origin);

void write(const std::filesystem::path& path, const Archive& a);
[[nodiscard]] Archive read(const std::filesystem::path& path);

/// Stores factors, ranks, U/V pairs and iteration count under `prefix`.
void put_state(Archive& a, const std::string& prefix, const sdtn::SdtnState& s);
[[nodiscard]] sdtn::SdtnState get_state(const Archive& a, const std::string& prefix);

/// FNV-1a 64-bit hash, rendered as 16 lowercase hex digits.
[[nodiscard]] std::string fnv1a64_hex(std::string_view bytes);

}  // namespace hsi::archive
