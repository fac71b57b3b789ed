#include "atlas/keyvalue.hpp"

#include <fstream>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"

namespace atlas::kv {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw SchemaError("config key '" + key + "': '" + value + "' is not " + what);
}

}  // namespace

Map read_file(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  Map out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    out[trim(text.substr(0, eq))] = trim(text.substr(eq + 1));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const Map& values) {
  auto out = csv::open_output(path);
  for (const auto& [key, value] : values) out << key << '=' << value << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

double get_double(const Map& m, const std::string& key, double fallback) {
  const auto it = m.find(key);
  if (it == m.end()) return fallback;
  const auto v = csv::parse_double(it->second);
  if (!v) bad(key, it->second, "a number");
  return *v;
}

std::size_t get_count(const Map& m, const std::string& key, std::size_t fallback) {
  const auto it = m.find(key);
  if (it == m.end()) return fallback;
  const auto v = csv::parse_int(it->second);
  if (!v || *v < 0) bad(key, it->second, "a nonnegative integer");
  return static_cast<std::size_t>(*v);
}

std::uint64_t get_u64(const Map& m, const std::string& key, std::uint64_t fallback) {
  const auto it = m.find(key);
  if (it == m.end()) return fallback;
  const auto v = csv::parse_int(it->second);
  if (!v || *v < 0) bad(key, it->second, "a nonnegative integer");
  return static_cast<std::uint64_t>(*v);
}

long long get_int(const Map& m, const std::string& key, long long fallback) {
  const auto it = m.find(key);
  if (it == m.end()) return fallback;
  const auto v = csv::parse_int(it->second);
  if (!v) bad(key, it->second, "an integer");
  return *v;
}

bool get_bool(const Map& m, const std::string& key, bool fallback) {
  const auto it = m.find(key);
  if (it == m.end()) return fallback;
  const auto& s = it->second;
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  bad(key, s, "a boolean");
}

std::string get_string(const Map& m, const std::string& key, const std::string& fallback) {
  const auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

}  // namespace atlas::kv
