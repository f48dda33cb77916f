// SPDX-License-Identifier: Apache-2.0
#include "sgt/report.hpp"

#include "sgt/entropy.hpp"
#include "sgt/trainer.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace sgt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileSchema {
  const char* name;
  const char* header;  // nullptr for JSON lines
  bool required;
};

const std::vector<FileSchema>& run_files() {
  static const std::vector<FileSchema> files = {
      {"metrics.csv", kMetricsHeader, true},
      {"entropy_heads.csv", kHeadEntropyHeader, true},
      {"entropy_layers.csv", kLayerEntropyHeader, true},
      {"eval.csv", kEvalHeader, true},
      {"long_context.csv", kLongContextHeader, false},
      {"growth.jsonl", nullptr, true},
  };
  return files;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

void check_growth_lines(const fs::path& file) {
  std::ifstream in(file);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ReportError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    for (const char* key : {"step", "event", "layer", "K_l", "S_l", "layer_entropies"}) {
      if (!j.contains(key)) throw ReportError(file.string() + ":" + std::to_string(n) + ": missing key " + key);
    }
    const auto ev = j["event"].get<std::string>();
    if (ev != "activate" && ev != "deepen" && ev != "stall" && ev != "freeze") {
      throw ReportError(file.string() + ":" + std::to_string(n) + ": unknown event " + ev);
    }
    if (!j["step"].is_number_integer() || !j["S_l"].is_array() || !j["layer_entropies"].is_array()) {
      throw ReportError(file.string() + ":" + std::to_string(n) + ": bad field types");
    }
  }
}

bool file_has_content(const fs::path& p) { return fs::exists(p) && fs::file_size(p) > 0; }

}  // namespace

void write_manifest(const RunManifest& m, const fs::path& dir) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["subcommand"] = m.subcommand;
  j["config_path"] = m.config_path;
  j["out_dir"] = m.out_dir.string();
  j["seed"] = m.seed;
  j["overrides"] = m.overrides;
  for (const auto& [k, v] : m.extra) j[k] = v;
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

std::string csv_header(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ReportError("missing file: " + file.string());
  std::string header;
  if (!std::getline(in, header) || header.empty()) throw ReportError("empty file: " + file.string());
  return header;
}

void check_run_schema(const fs::path& run) {
  if (!fs::is_directory(run)) throw ReportError("not a run directory: " + run.string());
  for (const char* required : {"manifest.json", "config.cfg", "checkpoint_final.bin"}) {
    if (!fs::exists(run / required)) throw ReportError("incomplete run (missing " + std::string(required) + "): " + run.string());
  }
  std::ifstream mf(run / "manifest.json");
  const auto manifest = json::parse(mf, nullptr, false);
  if (manifest.is_discarded() || manifest.value("schema_version", -1) != kSchemaVersion) {
    throw ReportError("manifest schema version mismatch in " + run.string());
  }
  for (const auto& f : run_files()) {
    const auto path = run / f.name;
    if (!fs::exists(path)) {
      if (f.required) throw ReportError("incomplete run (missing " + std::string(f.name) + "): " + run.string());
      continue;
    }
    if (f.header) {
      const auto header = csv_header(path);
      if (header != f.header) throw ReportError(path.string() + ": header '" + header + "' != '" + f.header + "'");
      const auto cols = split(header, ',').size();
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      int n = 1;
      while (std::getline(in, line)) {
        ++n;
        // Trailing empty fields (an empty growing_layer) still count as columns.
        std::size_t fields = 1;
        for (char c : line) fields += c == ',';
        if (fields != cols) throw ReportError(path.string() + ":" + std::to_string(n) + ": wrong column count");
      }
    } else {
      check_growth_lines(path);
    }
  }
}

void export_report(const fs::path& run, const fs::path& out) {
  check_run_schema(run);
  fs::create_directories(out);
  json schema;
  schema["schema_version"] = kSchemaVersion;
  auto copy = [&](const std::string& from, const std::string& to) {
    fs::copy_file(run / from, out / to, fs::copy_options::overwrite_existing);
  };
  for (const auto& f : run_files()) {
    if (!fs::exists(run / f.name)) continue;
    if (!f.header) {
      if (!file_has_content(run / f.name)) continue;
      copy(f.name, "growth_events.jsonl");
      schema["files"]["growth_events.jsonl"] = {"step", "event", "layer", "K_l", "S_l", "layer_entropies"};
      continue;
    }
    copy(f.name, f.name);
    schema["files"][f.name] = split(f.header, ',');
  }
  for (const char* extra : {"contribution_flow.json", "mask.csv", "manifest.json", "config.cfg"}) {
    if (fs::exists(run / extra)) copy(extra, extra);
  }
  std::ofstream so(out / "schema.json");
  so << schema.dump(2) << '\n';
}

namespace {

std::map<long long, std::pair<std::string, std::string>> read_loss_flops(const fs::path& run) {
  const auto path = run / "metrics.csv";
  if (csv_header(path) != kMetricsHeader) throw ReportError(path.string() + ": unexpected metrics schema");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::map<long long, std::pair<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    const auto f = split(line, ',');
    if (f.size() < 5) throw ReportError(path.string() + ": short metrics row");
    rows[std::stoll(f[0])] = {f[4], f[1]};
  }
  return rows;
}

}  // namespace

void export_loss_vs_flops(const fs::path& run_a, const fs::path& run_b, const fs::path& out_csv) {
  check_run_schema(run_a);
  check_run_schema(run_b);
  const auto a = read_loss_flops(run_a);
  const auto b = read_loss_flops(run_b);
  std::ofstream out(out_csv);
  out << "step,a_flops_cum,a_loss,b_flops_cum,b_loss\n";
  for (const auto& [step, av] : a) {
    const auto it = b.find(step);
    if (it == b.end()) continue;
    out << step << ',' << av.first << ',' << av.second << ',' << it->second.first << ',' << it->second.second << '\n';
  }
}

}  // namespace sgt
