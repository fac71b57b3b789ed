#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace atlas::csv {

// Splits one CSV record on commas. Double-quoted fields may contain commas
// and "" escapes; surrounding whitespace is trimmed from unquoted fields.
std::vector<std::string> split_record(std::string_view line);

// Strips a trailing '\r' so files written on Windows parse the same way.
std::string_view chomp(std::string_view line);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

// Shortest round-trippable decimal representation ("%.17g").
std::string format_exact(double value);
// Fixed-point with the given number of fractional digits.
std::string format_fixed(double value, int digits);

std::ifstream open_input(const std::filesystem::path& path);
std::ofstream open_output(const std::filesystem::path& path);

}  // namespace atlas::csv
