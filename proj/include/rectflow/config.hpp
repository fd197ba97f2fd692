#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rectflow {

/// One accepted configuration key. Keys without a default are required.
struct KeySpec {
  std::string key;
  std::optional<std::string> default_value;
};

/// Flat `section.key = value` settings read from an INI file with
/// `[section]` headers, plus `--set section.key=value` overrides.
class RunConfig {
 public:
  RunConfig() = default;
  /// Throws IoError when unreadable, ConfigError when malformed.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text);

  /// Accepts "section.key=value".
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Rejects keys outside `schema`, fills defaults and reports the first
  /// missing required key by name.
  RunConfig resolve(std::span<const KeySpec> schema) const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated reals; empty string gives an empty list.
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long> get_ints(const std::string& key) const;

  /// INI text with sections in sorted order.
  std::string to_ini() const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rectflow
