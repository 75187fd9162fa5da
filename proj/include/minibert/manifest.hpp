#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace minibert {

// Record of one pipeline run: what ran, with which configuration and
// seed, over which inputs (content-hashed), producing which artifacts and
// which metric summary. Every command that produces artifacts writes
// exactly one manifest into its output directory.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // full key=value snapshot after overrides
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> 16-hex content digest
  std::vector<std::string> outputs;           // paths written by the run
  double wall_seconds = 0.0;
  std::map<std::string, double> metrics;
};

// 64-bit FNV-1a over the raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

// Digest of a file's content as 16 lowercase hex digits.
std::string digest_file(const std::string& path);

std::string serialize_manifest(const RunManifest& manifest);  // JSON
RunManifest parse_manifest(const std::string& json_text);
void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

// Side-by-side comparison of run metric summaries, keyed to the first
// run: per-metric deltas (run minus first) on keys both runs report, and
// a closing mean row averaged over the keys every run shares.
struct CompareReport {
  std::vector<std::string> keys;    // sorted union of metric keys
  std::vector<std::string> shared;  // sorted intersection across all runs
  std::vector<std::map<std::string, double>> values;  // one metric map per run
  std::vector<double> means;        // per run, over `shared`
  std::vector<double> mean_deltas;  // means[i] - means[0]
  std::string table;                // rendered, aligned; absent cells are "-"
};

// Requires at least two manifests and a non-empty shared key set.
CompareReport compare_runs(const std::vector<RunManifest>& runs);

}  // namespace minibert
