#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sba {

/// Flat `key = value` text with dotted keys, `#` comments, and list values
/// written as `[a, b, c]`. Numbers may be written in terms of pi
/// (`pi/3`, `2*pi/3`); `${NAME}` expands an environment variable.
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text, std::string source = "<inline>");
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::vector<std::string> keys() const;
  const std::string& source() const { return source_; }
  /// Directory relative paths are resolved against (empty for inline text).
  const std::filesystem::path& base_dir() const { return base_dir_; }

  void set(const std::string& key, std::string raw_value);
  void erase(const std::string& key) { entries_.erase(key); }

  std::string raw(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::optional<double> get_optional_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         std::vector<std::size_t> fallback) const;

  /// Canonical "key = value" lines in key order.
  std::string canonical() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::string where(const std::string& key) const;

  std::map<std::string, Entry> entries_;
  std::string source_;
  std::filesystem::path base_dir_;
};

/// Parses a number, accepting `pi`, `pi/b`, `a*pi` and `a*pi/b`.
std::optional<double> parse_scalar(std::string_view text);

/// Splits `[a, b, c]` into its items; a bare value becomes a one-item list.
std::vector<std::string> parse_list(std::string_view text);

/// FNV-1a, hex encoded.
std::string stable_hash(std::string_view text);

}  // namespace sba
