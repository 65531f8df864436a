#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "veil/datagen.hpp"
#include "veil/metrics.hpp"
#include "veil/pipeline.hpp"

namespace veil {

// Which method a run trains: the full pipeline, one of the six ablation
// tasks, the blur or trade-off baselines, or no protection.
struct Variant {
  enum class Kind { kFull, kTask, kGaussian, kTradeoff, kNone };
  Kind kind = Kind::kFull;
  int task = 0;        // kTask
  double param = 0.0;  // sigma for kGaussian, lambda for kTradeoff

  // "full", "task3", "gaussian(1.5)", "tradeoff(1)", "none".
  std::string id() const;
  static Variant parse(const std::string& text);
};

struct IngestSource {
  std::filesystem::path root;
  std::filesystem::path manifest;
};

struct ExperimentConfig {
  // Exactly one data source is set.
  std::optional<SynthesisSpec> synthetic;
  std::optional<IngestSource> ingest;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 0;
  PipelineConfig pipeline;
  Variant variant;
  // JSON pointers of fields that were filled from built-in defaults.
  std::vector<std::string> defaulted;

  // Resolved configuration; every object holding a built-in default carries
  // "non_paper_default": true and lists the defaulted keys.
  std::string snapshot() const;
};

// Command-line overrides applied on top of the config file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
};

// Parses and validates; relative ingest paths resolve against `base_dir`.
// A ValidationError lists every violation found.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir = {},
                                         const ConfigOverrides& overrides = {});

// Run directory layout:
//   config.json            verbatim config file
//   overrides.json         command-line overrides
//   config.resolved.json   annotated snapshot
//   config.sha256          digest of config.json + overrides.json
//   data/{train,test}      dataset split
//   checkpoints/pretrained/*.varr, checkpoints/trained/*.varr
//   protected/{train,test} final protected datasets (+ stage.json)
//   protected/stage_g/{train,test} stage-G clips when a compensator follows
//   metrics.json, loss_trace.csv, digests.json
//   evaluation.{json,csv}, threat.json
struct RunDirectory {
  std::filesystem::path root;
  ExperimentConfig config;
};

// Creates (or re-opens with an identical config) a run directory.
RunDirectory init_run_directory(const std::filesystem::path& config_path,
                                const std::filesystem::path& out,
                                const ConfigOverrides& overrides = {});
// Re-opens an existing run directory; refuses if the snapshot digest
// no longer matches.
RunDirectory open_run_directory(const std::filesystem::path& dir);

std::pair<Dataset, Dataset> cmd_generate(const RunDirectory& run);
PipelineState cmd_pretrain(const RunDirectory& run);

struct TrainOutcome {
  VariantResult result;
  std::map<std::string, std::string> digests_before;
  std::map<std::string, std::string> digests_after;
};
TrainOutcome cmd_train(const RunDirectory& run);

PrivacyReport cmd_evaluate(const std::filesystem::path& run_dir);
ThreatReport cmd_attack(const std::filesystem::path& run_dir);

// Runs the full pipeline and the listed tasks in sub-directories of `out`
// sharing one pretraining, and writes ablation.csv.
std::vector<TableRow> cmd_ablate(const std::filesystem::path& config_path,
                                 const std::vector<int>& tasks,
                                 const std::filesystem::path& out,
                                 const ConfigOverrides& overrides = {});

// Merges metrics/evaluation/threat rows of several runs into one CSV and
// optionally draws a PLR/ACC bar chart.
std::vector<TableRow> cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                                 const std::filesystem::path& csv_out,
                                 const std::optional<std::filesystem::path>& plot_out);

// Grouped bars (PLR, ACC) per row, values in [0, 1].
void write_bar_chart(const std::filesystem::path& path, const std::vector<TableRow>& rows);

}  // namespace veil
