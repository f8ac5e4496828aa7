#include "coda/config.hpp"

#include <fstream>
#include <sstream>

#include "coda/errors.hpp"
#include "json.hpp"

namespace coda {

static std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Config Config::from_text(const std::string& text) {
  Config c;
  std::istringstream ss(text);
  std::string line, prefix;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigValidationError("config line " + std::to_string(lineno) + ": unterminated section header");
      prefix = trim(t.substr(1, t.size() - 2));
      if (!prefix.empty()) prefix += ".";
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigValidationError("config line " + std::to_string(lineno) + ": empty key");
    c.kv_[prefix + key] = val;
  }
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  try {
    return from_text(buf.str());
  } catch (const ConfigValidationError& e) {
    throw ConfigValidationError(path + ": " + e.what());
  }
}

void Config::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigValidationError("--set expects key.path=value, got '" + assignment + "'");
  std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigValidationError("--set: empty key in '" + assignment + "'");
  kv_[key] = trim(assignment.substr(eq + 1));
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigValidationError("missing required config key '" + key + "'");
  return it->second;
}

int64_t Config::integer(const std::string& key, int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw ConfigValidationError("config key '" + key + "': expected integer, got '" + it->second + "'");
  }
}

int64_t Config::require_integer(const std::string& key) const {
  if (!has(key)) throw ConfigValidationError("missing required config key '" + key + "'");
  return integer(key, 0);
}

double Config::number(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw ConfigValidationError("config key '" + key + "': expected number, got '" + it->second + "'");
  }
}

bool Config::boolean(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigValidationError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string Config::dump_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv_) j[k] = v;
  return j.dump(2);
}

}  // namespace coda
