#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lungsynth {

// Key/value configuration read from a small TOML subset: `[section]`
// headers, `key = value` pairs, quoted strings, numbers, booleans and flat
// arrays. Keys are addressed as "section.key". Every getter throws
// ConfigError on a missing key without default or on a type mismatch.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text, std::string_view origin = "<string>");
  static Config load(const std::filesystem::path& path);

  // Applies an override of the form "section.key=value" (value in the same
  // syntax as the file).
  void apply_override(std::string_view assignment);
  void set(const std::string& key, const std::string& literal);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key,
                         std::optional<std::string> fallback = std::nullopt) const;
  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const;
  std::int64_t get_int(const std::string& key,
                       std::optional<std::int64_t> fallback = std::nullopt) const;
  bool get_bool(const std::string& key, std::optional<bool> fallback = std::nullopt) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::optional<std::vector<double>> fallback = std::nullopt) const;
  std::vector<int> get_int_list(const std::string& key,
                                std::optional<std::vector<int>> fallback = std::nullopt) const;
  // Array of quoted or bare words.
  std::vector<std::string> get_string_list(const std::string& key,
                                           std::optional<std::vector<std::string>> fallback = std::nullopt) const;

  // Sorted `key = literal` lines; stable input for hashing.
  std::string canonical() const;
  std::uint64_t hash() const;

  const std::string& origin() const { return origin_; }

 private:
  struct Value {
    std::string literal;  // unquoted text for strings, raw token otherwise
    bool quoted = false;
  };
  const Value* find(const std::string& key) const;

  std::map<std::string, Value> values_;
  std::string origin_ = "<empty>";
};

// 64-bit FNV-1a, used for config and manifest fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace lungsynth
