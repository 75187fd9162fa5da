#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace minibert {

// Configuration problems (bad syntax, bad types, unknown or missing
// keys) are typed so the command layer can map them to its
// invalid-config exit status, distinct from runtime failures.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value configuration document. One "key = value" assignment
// per line; '#' starts a comment line; blank lines are ignored. Keys are
// unique. Values keep interior whitespace but are trimmed at both ends,
// so parse(serialize(parse(text))) is a fixed point.
struct KvConfig {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values[key] = value; }

  // Required lookup: missing key is an error.
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  // Typed lookups reject unparseable or trailing garbage values.
  int64_t get_int(const std::string& key) const;
  int64_t get_int_or(const std::string& key, int64_t fallback) const;
  double get_real(const std::string& key) const;
  double get_real_or(const std::string& key, double fallback) const;
  // Accepts true/false/1/0.
  bool get_bool_or(const std::string& key, bool fallback) const;
};

KvConfig parse_kv_text(const std::string& text);
KvConfig load_kv_file(const std::string& path);

// Sorted "key = value" lines with a trailing newline; empty config
// serializes to the empty string.
std::string serialize_kv(const KvConfig& config);

// Applies one "key=value" override (the --set flag payload).
void apply_kv_override(KvConfig& config, const std::string& assignment);

}  // namespace minibert
