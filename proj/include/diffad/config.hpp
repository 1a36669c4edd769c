#ifndef DIFFAD_CONFIG_HPP
#define DIFFAD_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffad/rng.hpp"

namespace diffad {

// Flat key-value configuration. The file format is line oriented:
//
//   # comment
//   train.iterations = 3000
//   detect.mode = rpg
//
// Keys are dotted lowercase identifiers; values run to the end of the line.
// Later assignments win, which is also how command-line overrides layer on
// top of a file.
class Config {
 public:
  static Config parse_string(const std::string& text, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      cfg.parse_line(line, origin, lineno);
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    validate_key(key, "<set>", 0);
    kv_[key] = trim(value);
  }

  // "key=value" as written on a command line.
  void apply_override(const std::string& keyval) {
    std::size_t eq = keyval.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("config: override must look like key=value, got '" + keyval +
                                  "'");
    set(trim(keyval.substr(0, eq)), keyval.substr(eq + 1));
  }

  // Entries of `other` replace entries here.
  void merge(const Config& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("config: missing required key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  long get_int(const std::string& key) const { return to_int(key, get_string(key)); }
  long get_int(const std::string& key, long fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_int(key, it->second);
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_double(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: key '" + key + "': cannot parse '" + v + "' as bool");
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(kv_.size());
    for (const auto& [k, v] : kv_) out.push_back(k);
    return out;
  }

  // Sorted "key = value" lines; the digest of this text identifies the run
  // in every output file header.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : kv_) {
      out += k;
      out += " = ";
      out += v;
      out += "\n";
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }

  std::string hash_hex() const {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << canonical();
    if (!out) throw std::runtime_error("config: write failed for " + path);
  }

 private:
  std::map<std::string, std::string> kv_;

  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static void validate_key(const std::string& key, const std::string& origin, int lineno) {
    auto fail = [&](const std::string& why) {
      std::string where = lineno > 0 ? origin + ":" + std::to_string(lineno) + ": " : "config: ";
      throw std::invalid_argument(where + why);
    };
    if (key.empty()) fail("empty key");
    for (char c : key) {
      bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '_';
      if (!ok) fail("invalid character '" + std::string(1, c) + "' in key '" + key + "'");
    }
    if (key.front() == '.' || key.back() == '.')
      fail("key '" + key + "' may not start or end with '.'");
  }

  void parse_line(const std::string& raw, const std::string& origin, int lineno) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') return;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    validate_key(key, origin, lineno);
    kv_[key] = trim(line.substr(eq + 1));
  }

  static long to_int(const std::string& key, const std::string& v) {
    long out = 0;
    const char* b = v.data();
    const char* e = b + v.size();
    auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e)
      throw std::invalid_argument("config: key '" + key + "': cannot parse '" + v +
                                  "' as integer");
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const char* b = v.data();
    const char* e = b + v.size();
    auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e)
      throw std::invalid_argument("config: key '" + key + "': cannot parse '" + v +
                                  "' as number");
    return out;
  }
};

}  // namespace diffad

#endif
