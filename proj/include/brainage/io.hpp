#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace brainage {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// Splits one CSV line on commas. Quoting is not supported.
std::vector<std::string> split_csv_line(std::string_view line);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double value);

}  // namespace brainage
