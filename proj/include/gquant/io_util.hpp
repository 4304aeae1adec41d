#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gquant {

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

/// Strict parse of the whole string; throws DataError naming `what`.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a64_hex(std::string_view bytes);

std::string_view trim(std::string_view s) noexcept;

}  // namespace gquant
