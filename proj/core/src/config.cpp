#include "sba/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sba/error.hpp"

namespace sba {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::optional<double> plain_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string expand_env(const std::string& value, const std::string& where) {
  std::string out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
      const auto close = value.find('}', i + 2);
      if (close == std::string::npos) throw ConfigError(where + ": unterminated ${...}");
      const std::string name = value.substr(i + 2, close - i - 2);
      const char* env = std::getenv(name.c_str());
      if (!env) throw ConfigError(where + ": environment variable " + name + " is not set");
      out += env;
      i = close;
    } else {
      out += value[i];
    }
  }
  return out;
}

}  // namespace

std::optional<double> parse_scalar(std::string_view text) {
  const std::string s = trim(text);
  if (auto v = plain_number(s)) return v;
  const auto pi_at = s.find("pi");
  if (pi_at == std::string::npos) return std::nullopt;
  double factor = 1.0, divisor = 1.0;
  std::string_view head = std::string_view(s).substr(0, pi_at);
  std::string_view tail = std::string_view(s).substr(pi_at + 2);
  if (!head.empty()) {
    if (head.back() != '*') return std::nullopt;
    head.remove_suffix(1);
    const auto f = plain_number(trim(head));
    if (!f) return std::nullopt;
    factor = *f;
  }
  if (!tail.empty()) {
    if (tail.front() != '/') return std::nullopt;
    tail.remove_prefix(1);
    const auto d = plain_number(trim(tail));
    if (!d || *d == 0.0) return std::nullopt;
    divisor = *d;
  }
  return factor * std::numbers::pi / divisor;
}

std::vector<std::string> parse_list(std::string_view text) {
  std::string s = trim(text);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
    s = s.substr(1, s.size() - 2);
    std::vector<std::string> items;
    if (trim(s).empty()) return items;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) items.push_back(unquote(trim(item)));
    return items;
  }
  return {unquote(s)};
}

std::string stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ConfigFile ConfigFile::parse(std::string_view text, std::string source) {
  ConfigFile cfg;
  cfg.source_ = std::move(source);
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string at = cfg.source_ + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(at + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(at + ": empty key");
    if (cfg.entries_.count(key)) throw ConfigError(at + ": duplicate key '" + key + "'");
    cfg.entries_[key] = Entry{expand_env(value, at), line_no};
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  ConfigFile cfg = parse(buffer.str(), path.string());
  cfg.base_dir_ = path.parent_path();
  return cfg;
}

std::vector<std::string> ConfigFile::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void ConfigFile::set(const std::string& key, std::string raw_value) {
  entries_[key] = Entry{std::move(raw_value), 0};
}

std::string ConfigFile::where(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end() || it->second.line == 0) return source_ + ": " + key;
  return source_ + ":" + std::to_string(it->second.line) + ": " + key;
}

std::string ConfigFile::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
  return it->second.value;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? unquote(raw(key)) : fallback;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  return get_optional_double(key).value_or(fallback);
}

std::optional<double> ConfigFile::get_optional_double(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  const auto v = parse_scalar(unquote(raw(key)));
  if (!v || !std::isfinite(*v)) {
    throw ConfigError(where(key) + ": expected a number, got '" + raw(key) + "'");
  }
  return v;
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = unquote(raw(key));
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(where(key) + ": expected an integer, got '" + s + "'");
  }
  return v;
}

std::size_t ConfigFile::get_size(const std::string& key, std::size_t fallback) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(where(key) + ": must be >= 0");
  return static_cast<std::size_t>(v);
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string s = unquote(raw(key));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(where(key) + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> ConfigFile::get_list(const std::string& key) const {
  return has(key) ? parse_list(raw(key)) : std::vector<std::string>{};
}

std::vector<std::size_t> ConfigFile::get_size_list(const std::string& key,
                                                   std::vector<std::size_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : get_list(key)) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError(where(key) + ": expected a list of non-negative integers");
    }
    out.push_back(v);
  }
  return out;
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
  return out;
}

}  // namespace sba
