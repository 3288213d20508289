#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace faultformer {

/// Ordered `key = value` pairs. Text form: one pair per line, `#` starts a
/// comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values_file(const std::string& path);
void write_key_values(std::ostream& out, const KeyValues& values);

// Typed lookups; malformed values raise ConfigError naming the key.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::size_t kv_size(const KeyValues& kv, const std::string& key, std::size_t fallback);
std::uint64_t kv_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

std::string format_double(double value);

}  // namespace faultformer
