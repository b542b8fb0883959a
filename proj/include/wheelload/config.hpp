#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace wheelload {

/// Flat key/value configuration. Keys are dotted (`geometry.u1`); a
/// `[section]` line prefixes the keys that follow it. `#` starts a comment.
///
///     [geometry]
///     u1 = [0.15, -0.33, 0.13]
///     body.m_u = 12.0
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(std::string_view text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key) const;
  Eigen::Vector3d get_vec3(const std::string& key) const;

  /// Canonical text (sorted `key = value` lines); stable across runs.
  std::string canonical() const;
  std::string hash() const;

 private:
  std::map<std::string, std::string> entries_;
};

/// 64-bit FNV-1a; used for config/dataset fingerprints, not for security.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Shortest decimal text that round-trips a double exactly (17 significant digits).
std::string format_double(double value);

}  // namespace wheelload
