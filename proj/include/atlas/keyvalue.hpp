#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace atlas::kv {

using Map = std::map<std::string, std::string>;

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. Throws IoError or
/// SchemaError.
Map read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Map& values);

// Typed lookups; the fallback is returned when the key is absent and a
// SchemaError is thrown when the value does not parse.
double get_double(const Map& m, const std::string& key, double fallback);
std::size_t get_count(const Map& m, const std::string& key, std::size_t fallback);
std::uint64_t get_u64(const Map& m, const std::string& key, std::uint64_t fallback);
long long get_int(const Map& m, const std::string& key, long long fallback);
bool get_bool(const Map& m, const std::string& key, bool fallback);
std::string get_string(const Map& m, const std::string& key, const std::string& fallback);

}  // namespace atlas::kv
