// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srppo/pipeline.hpp"

namespace srppo {

namespace fs = std::filesystem;

// Command-line overrides applied on top of a config file.
struct RunOverrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::string>> stages;
};

// Parses and validates a JSON config file, applying overrides.
ExperimentConfig load_config(const fs::path& path, const RunOverrides& overrides = {});

// Runs the pipeline into config.output_dir:
//   config.json            resolved config, every default materialized
//   manifest.json          status and completed stages
//   failure.json           written only when a stage throws
//   data/ pretrain/ sft/ sft_extended/ ppo/ baseline/ length_study/ eval/
// Refuses a directory that already holds a run. On stage failure the
// earlier outputs stay in place and the exception is rethrown.
fs::path run_experiment(const ExperimentConfig& config);

struct ReportOutput {
  std::vector<fs::path> files;
  std::vector<std::string> absent_stages;  // configured stages without logs
};

// Regenerates report/ from the logs of a run directory: summary.csv and one
// SVG per logged metric. Throws InputError listing the expected files when
// the directory holds no logs at all.
ReportOutput generate_report(const fs::path& run_dir);

struct CompareTable {
  std::vector<std::string> columns;                       // metric names
  std::vector<std::string> rows;                          // "<run>/<method>"
  std::vector<std::vector<std::optional<double>>> values;  // [row][column]
  std::vector<std::vector<bool>> best;                     // [row][column]
};

// Merges eval/report.jsonl of every run. Needs at least two runs over the
// same world (spec and seed); otherwise ConfigError with a diff summary.
CompareTable compare_runs(const std::vector<fs::path>& run_dirs);
// Best cells carry a trailing '*'.
void write_compare_csv(std::ostream& out, const CompareTable& table);

// Writes a line plot with one polyline per series. Deterministic output.
struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
void write_svg_plot(std::ostream& out, const std::string& title, const std::string& x_label,
                    const std::vector<Series>& series);

}  // namespace srppo
