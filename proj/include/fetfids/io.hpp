#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fetfids {

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace fetfids
