#include "minibert/kv_config.hpp"

#include <cctype>
#include <cstdlib>
#include <stdexcept>

#include "minibert/textio.hpp"

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& message) { throw ConfigError(message); }

std::string trim(const std::string& text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return text.substr(begin, end - begin);
}

void assign(KvConfig& config, const std::string& raw, const std::string& where,
            bool allow_replace) {
  std::size_t eq = raw.find('=');
  if (eq == std::string::npos) fail("config: " + where + ": expected key=value, got \"" + raw + "\"");
  std::string key = trim(raw.substr(0, eq));
  std::string value = trim(raw.substr(eq + 1));
  if (key.empty()) fail("config: " + where + ": empty key");
  if (!allow_replace && config.has(key)) fail("config: " + where + ": duplicate key \"" + key + "\"");
  config.values[key] = value;
}

}  // namespace

const std::string& KvConfig::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) fail("config: missing required key \"" + key + "\"");
  return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int64_t KvConfig::get_int(const std::string& key) const {
  const std::string& text = get(key);
  char* end = nullptr;
  long long parsed = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size())
    fail("config: key \"" + key + "\" is not an integer: \"" + text + "\"");
  return static_cast<int64_t>(parsed);
}

int64_t KvConfig::get_int_or(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KvConfig::get_real(const std::string& key) const {
  const std::string& text = get(key);
  char* end = nullptr;
  double parsed = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    fail("config: key \"" + key + "\" is not a number: \"" + text + "\"");
  return parsed;
}

double KvConfig::get_real_or(const std::string& key, double fallback) const {
  return has(key) ? get_real(key) : fallback;
}

bool KvConfig::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& text = get(key);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail("config: key \"" + key + "\" is not a boolean: \"" + text + "\"");
}

KvConfig parse_kv_text(const std::string& text) {
  KvConfig config;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string line =
        eol == std::string::npos ? text.substr(pos) : text.substr(pos, eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    assign(config, stripped, "line " + std::to_string(line_no), false);
  }
  return config;
}

KvConfig load_kv_file(const std::string& path) { return parse_kv_text(read_text_file(path)); }

std::string serialize_kv(const KvConfig& config) {
  std::string out;
  for (const auto& [key, value] : config.values) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

void apply_kv_override(KvConfig& config, const std::string& assignment) {
  assign(config, assignment, "--set \"" + assignment + "\"", true);
}

}  // namespace minibert
