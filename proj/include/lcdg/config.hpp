#pragma once

// Flat, dotted-key run configuration.
//
// File format: one `key = value` per line, `#` starts a comment, blank lines
// ignored. Values stay strings until a typed getter parses them. Precedence
// is defaults < file < command-line overrides, applied via merge_from.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lcdg {

class Config {
 public:
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  // Typed getters. A missing key falls back; an unparsable value always
  // throws ConfigError regardless of the fallback.
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Missing-key-throws variants for required values.
  std::string require_str(const std::string& key) const;

  // Sorted key/value view, e.g. for manifests.
  const std::map<std::string, std::string>& entries() const { return kv_; }

  // Serialized `key = value` lines, sorted; from_string(to_string()) round
  // trips exactly.
  std::string to_string() const;

  // Parsers. Duplicate keys within one source are an error; overriding
  // happens only across sources via merge_from.
  static Config from_string(const std::string& text, const std::string& source = "<string>");
  static Config from_file(const std::string& path);

  // Overlay: keys in `overrides` replace keys here.
  void merge_from(const Config& overrides);

 private:
  std::map<std::string, std::string> kv_;
};

// One known configuration key with its built-in default ("" = no default;
// such keys are absent until set).
struct ConfigKey {
  std::string name;
  std::string preset;
  std::string help;
};

// Every key the engine understands, sorted by name.
const std::vector<ConfigKey>& config_schema();

// Config holding every schema key that has a preset.
Config default_config();

// Throws ConfigError naming the first key of `cfg` not present in the schema.
void require_known_keys(const Config& cfg);

}  // namespace lcdg
