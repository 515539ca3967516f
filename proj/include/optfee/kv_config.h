#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace optfee {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KvEntry {
  std::string value;
  int line = 0;
};

/// Flat `key = value` text. `#` starts a comment, blank lines are skipped,
/// keys may carry dotted section prefixes (`model.sigma`). Duplicate keys
/// and lines without `=` are errors citing the line number.
using KeyValues = std::map<std::string, KvEntry>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

/// Typed accessors; errors cite the key and line.
double kv_double(const KvEntry& entry, std::string_view key);
long long kv_int(const KvEntry& entry, std::string_view key);
unsigned long long kv_uint(const KvEntry& entry, std::string_view key);
bool kv_bool(const KvEntry& entry, std::string_view key);
std::vector<double> kv_doubles(const KvEntry& entry, std::string_view key);

/// Shortest text that parses back to exactly the same double.
std::string format_double(double v);
std::string format_doubles(const std::vector<double>& values);

}  // namespace optfee
