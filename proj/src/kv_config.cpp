#include "optfee/kv_config.h"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace optfee {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const KvEntry& entry, std::string_view key, std::string_view expected) {
  throw ConfigError("line " + std::to_string(entry.line) + ": key '" + std::string(key) + "' expects " +
                    std::string(expected) + ", got '" + entry.value + "'");
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                          std::string(line) + "'");
      }
      const std::string key(trim(line.substr(0, eq)));
      if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      const std::string value(trim(line.substr(eq + 1)));
      if (auto it = kv.find(key); it != kv.end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "' (first at line " +
                          std::to_string(it->second.line) + ")");
      }
      kv.emplace(key, KvEntry{value, line_no});
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [key, entry] : kv) {
    out += key;
    out += " = ";
    out += entry.value;
    out += '\n';
  }
  return out;
}

double kv_double(const KvEntry& entry, std::string_view key) {
  double v = 0.0;
  const char* first = entry.value.data();
  const char* last = first + entry.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(entry, key, "a real number");
  return v;
}

long long kv_int(const KvEntry& entry, std::string_view key) {
  long long v = 0;
  const char* first = entry.value.data();
  const char* last = first + entry.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(entry, key, "an integer");
  return v;
}

unsigned long long kv_uint(const KvEntry& entry, std::string_view key) {
  unsigned long long v = 0;
  const char* first = entry.value.data();
  const char* last = first + entry.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(entry, key, "a non-negative integer");
  return v;
}

bool kv_bool(const KvEntry& entry, std::string_view key) {
  if (entry.value == "true" || entry.value == "1") return true;
  if (entry.value == "false" || entry.value == "0") return false;
  bad_value(entry, key, "true/false");
}

std::vector<double> kv_doubles(const KvEntry& entry, std::string_view key) {
  std::vector<double> out;
  std::string_view rest = entry.value;
  while (!trim(rest).empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = trim(rest.substr(0, comma));
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      bad_value(entry, key, "a comma-separated list of reals");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_double(values[i]);
  }
  return out;
}

}  // namespace optfee
