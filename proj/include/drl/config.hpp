// Flat key = value configuration files.
//
//   # comment
//   seed = 42
//   sizes = 500, 2000
//   include = common.cfg      # keys from another file; later lines win
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drl/errors.hpp"

namespace drl {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::filesystem::path& path) {
    KeyValueConfig c;
    c.load(path, 0);
    return c;
  }

  static KeyValueConfig from_string(const std::string& text) {
    KeyValueConfig c;
    std::istringstream is(text);
    c.parse(is, "<string>", {}, 0);
    return c;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw FormatError("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return to_number<double>(key, [](const std::string& s, std::size_t* p) { return std::stod(s, p); });
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    return to_number<long long>(key, [](const std::string& s, std::size_t* p) { return std::stoll(s, p); });
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return to_number<std::uint64_t>(
        key, [](const std::string& s, std::size_t* p) { return std::stoull(s, p); });
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    return parse_bool(values_.at(key), key);
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    return split_list(values_.at(key));
  }

  static bool parse_bool(std::string v, const std::string& key) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw FormatError("config: '" + key + "' expects a boolean, got '" + v + "'");
  }

  /// Throws on keys outside `known`, listing them.
  void check_known(const std::set<std::string>& known) const {
    std::string bad;
    for (const auto& [k, v] : values_)
      if (!known.count(k)) bad += (bad.empty() ? "" : ", ") + k;
    if (!bad.empty()) throw FormatError("config: unknown keys: " + bad);
  }

  /// Canonical "key=value\n" listing in key order.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  /// FNV-1a digest of the canonical form, as 16 hex digits.
  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical()) h = (h ^ c) * 0x100000001b3ull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  template <class T, class Fn>
  T to_number(const std::string& key, Fn fn) const {
    const std::string& s = values_.at(key);
    try {
      std::size_t pos = 0;
      T v = fn(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw FormatError("config: '" + key + "' has a malformed number '" + s + "'");
    }
  }

  void load(const std::filesystem::path& path, int depth) {
    std::ifstream is(path);
    if (!is) throw FormatError("config: cannot open " + path.string());
    parse(is, path.string(), path.parent_path(), depth);
  }

  void parse(std::istream& is, const std::string& name, const std::filesystem::path& dir,
             int depth) {
    if (depth > 8) throw FormatError("config: include nesting too deep at " + name);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw FormatError("config " + name + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw FormatError("config " + name + ":" + std::to_string(lineno) + ": empty key");
      if (key == "include") {
        std::filesystem::path p(value);
        load(p.is_absolute() ? p : dir / p, depth + 1);
      } else {
        values_[key] = value;
      }
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace drl
