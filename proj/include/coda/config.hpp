#pragma once

#include <map>
#include <string>
#include <vector>

namespace coda {

// Plain-text hierarchical key-value configuration.
//
// Grammar (one entry per line):
//   # comment                      -- ignored, as are blank lines
//   [section.prefix]               -- prefixes subsequent keys
//   key.path = value               -- dotted path, value trimmed
//
// Values are untyped text; typed accessors parse on demand and raise
// ConfigValidationError naming the offending key. Lists are comma-separated.
class Config {
 public:
  static Config from_file(const std::string& path);   // throws IOFailure
  static Config from_text(const std::string& text);

  // "key.path=value" as accepted by --set
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  std::string str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  int64_t integer(const std::string& key, int64_t fallback) const;
  int64_t require_integer(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<std::string> list(const std::string& key) const;  // empty if absent

  const std::map<std::string, std::string>& entries() const { return kv_; }
  std::string dump_json() const;  // config snapshot for run records

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace coda
