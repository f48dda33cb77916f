// SPDX-License-Identifier: Apache-2.0
//
// Run manifests and report bundles. Every CSV in a run directory has a fixed
// header; the bundle carries schema.json naming each file's columns and the
// schema version.

#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgt {

inline constexpr int kSchemaVersion = 1;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> extra;
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);

/// Header row of a CSV file (throws if missing or empty).
std::string csv_header(const std::filesystem::path& file);

/// Checks that a run directory is complete and every file has the expected
/// schema. Throws ReportError with the first problem found.
void check_run_schema(const std::filesystem::path& run);

/// Copies the run's logs into out with stable names and writes schema.json.
/// Growth events are included only when the run produced any.
void export_report(const std::filesystem::path& run, const std::filesystem::path& out);

/// Joins two metric logs on step: step,a_flops_cum,a_loss,b_flops_cum,b_loss.
void export_loss_vs_flops(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                          const std::filesystem::path& out_csv);

}  // namespace sgt
