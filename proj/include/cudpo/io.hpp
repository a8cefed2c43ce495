#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cudpo::io {

/// Shortest text that parses back to the identical double.
std::string format_double(double x);
/// Fixed-point text with the given number of decimals.
std::string format_fixed(double x, int decimals);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// Strict parsers; throw std::invalid_argument naming `what` on bad input.
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

std::vector<std::string> read_lines(const std::filesystem::path& path);
/// Writes the whole file or throws std::runtime_error.
void write_text(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

/// `key=value` tokens from a header line (tab separated, leading "# tag").
std::vector<std::pair<std::string, std::string>> parse_header_fields(std::string_view line);

}  // namespace cudpo::io
