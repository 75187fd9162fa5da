#include "minibert/manifest.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "minibert/textio.hpp"

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& message) { throw std::runtime_error(message); }

std::string format_value(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", value);
  return buffer;
}

// One table row: first cell left-aligned to width[0], the rest
// right-aligned.
std::string render_row(const std::vector<std::string>& cells,
                       const std::vector<std::size_t>& widths) {
  std::string row;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) row += "  ";
    std::size_t pad = widths[i] > cells[i].size() ? widths[i] - cells[i].size() : 0;
    if (i == 0) {
      row += cells[i];
      row.append(pad, ' ');
    } else {
      row.append(pad, ' ');
      row += cells[i];
    }
  }
  row += '\n';
  return row;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char byte : bytes) {
    hash ^= byte;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string digest_file(const std::string& path) {
  std::uint64_t hash = fnv1a64(read_text_file(path));
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

std::string serialize_manifest(const RunManifest& manifest) {
  nlohmann::json doc;
  doc["command"] = manifest.command;
  doc["config"] = manifest.config;
  doc["seed"] = manifest.seed;
  doc["inputs"] = manifest.inputs;
  doc["outputs"] = manifest.outputs;
  doc["wall_seconds"] = manifest.wall_seconds;
  doc["metrics"] = manifest.metrics;
  return doc.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("manifest: invalid JSON: ") + e.what());
  }
  RunManifest manifest;
  try {
    manifest.command = doc.at("command").get<std::string>();
    manifest.config = doc.at("config").get<std::map<std::string, std::string>>();
    manifest.seed = doc.at("seed").get<std::uint64_t>();
    manifest.inputs = doc.at("inputs").get<std::map<std::string, std::string>>();
    manifest.outputs = doc.at("outputs").get<std::vector<std::string>>();
    manifest.wall_seconds = doc.at("wall_seconds").get<double>();
    manifest.metrics = doc.at("metrics").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("manifest: missing or mistyped field: ") + e.what());
  }
  return manifest;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  write_text_file(path, serialize_manifest(manifest));
}

RunManifest read_manifest(const std::string& path) {
  return parse_manifest(read_text_file(path));
}

CompareReport compare_runs(const std::vector<RunManifest>& runs) {
  if (runs.size() < 2) fail("compare_runs: need at least two manifests");
  CompareReport report;
  std::set<std::string> key_union;
  for (const RunManifest& run : runs) {
    report.values.push_back(run.metrics);
    for (const auto& [key, value] : run.metrics) key_union.insert(key);
  }
  for (const std::string& key : key_union) {
    bool everywhere = true;
    for (const RunManifest& run : runs)
      if (run.metrics.count(key) == 0) everywhere = false;
    if (everywhere) report.shared.push_back(key);
    report.keys.push_back(key);
  }
  if (report.shared.empty()) fail("compare_runs: no shared metric keys");

  for (const RunManifest& run : runs) {
    double sum = 0.0;
    for (const std::string& key : report.shared) sum += run.metrics.at(key);
    report.means.push_back(sum / static_cast<double>(report.shared.size()));
  }
  for (double mean : report.means) report.mean_deltas.push_back(mean - report.means[0]);

  // Header: metric, one value column per run, one delta column per later
  // run. Cells for metrics a run does not report stay "-".
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"metric"};
  for (std::size_t r = 0; r < runs.size(); ++r) header.push_back("run" + std::to_string(r + 1));
  for (std::size_t r = 1; r < runs.size(); ++r)
    header.push_back("delta" + std::to_string(r + 1));
  rows.push_back(header);
  for (const std::string& key : report.keys) {
    std::vector<std::string> row = {key};
    for (const RunManifest& run : runs) {
      auto it = run.metrics.find(key);
      row.push_back(it == run.metrics.end() ? "-" : format_value(it->second));
    }
    for (std::size_t r = 1; r < runs.size(); ++r) {
      auto here = runs[r].metrics.find(key);
      auto base = runs[0].metrics.find(key);
      if (here == runs[r].metrics.end() || base == runs[0].metrics.end())
        row.push_back("-");
      else
        row.push_back(format_value(here->second - base->second));
    }
    rows.push_back(row);
  }
  std::vector<std::string> mean_row = {"mean"};
  for (double mean : report.means) mean_row.push_back(format_value(mean));
  for (std::size_t r = 1; r < runs.size(); ++r)
    mean_row.push_back(format_value(report.mean_deltas[r]));
  rows.push_back(mean_row);

  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  for (const auto& row : rows) report.table += render_row(row, widths);
  return report;
}

}  // namespace minibert
