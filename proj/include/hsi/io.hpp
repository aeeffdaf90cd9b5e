#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hsi::io {

/// Writes to a sibling temporary file, then renames it over `path`, so
/// readers never observe a partially written file.
void write_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_atomic(const std::filesystem::path& path, std::string_view text);

/// Whole file contents; throws DataError naming the path.
[[nodiscard]] std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
[[nodiscard]] std::string read_text(const std::filesystem::path& path);

}  // namespace hsi::io
