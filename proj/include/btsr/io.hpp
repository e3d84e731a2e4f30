#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace btsr {

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Shortest text that parses back to exactly `x` is not guaranteed by
// iostreams; this always emits 17 significant digits.
std::string format_real(double x);

// FNV-1a over the bytes, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace btsr
