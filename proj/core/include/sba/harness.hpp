#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sba/config.hpp"
#include "sba/data_io.hpp"
#include "sba/trainer.hpp"

namespace sba {

enum class DatasetKind { idx, delimited, two_moons };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  // idx
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  // delimited
  std::filesystem::path train_path, test_path;
  int label_column = -1;
  // two_moons
  std::size_t train_count = 400;
  std::size_t test_count = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;

  std::size_t train_limit = 0;  // 0: all
  std::size_t test_limit = 0;
  std::optional<NormalizationKind> normalize;
};

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
};

/// Loads both splits. A normalization is fitted on the training split and
/// applied to the test split.
LoadedData load_datasets(const DatasetSpec& spec);

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct ExperimentSpec {
  std::string name = "experiment";
  /// Run-level keys (train.*, optim.*, vicinity.*, model.*, eval.*, seed.*).
  ConfigFile run_template;
  DatasetSpec dataset;
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "sba-out";
  std::size_t workers = 1;
  bool write_checkpoints = true;
};

/// Every key a config file may contain, for documentation and validation.
std::vector<std::string> known_config_keys();

/// Builds a RunConfig from the run-level keys. `master_seed` feeds
/// Seeds::derive; seed.<name> keys override single streams.
RunConfig run_config_from(const ConfigFile& file, std::uint64_t master_seed);

/// Validates keys, sweep axes and every run of the cross product.
ExperimentSpec parse_experiment(const ConfigFile& file);
ExperimentSpec load_experiment(const std::filesystem::path& path);

struct PlannedRun {
  std::size_t index = 0;
  std::string run_id;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::uint64_t seed = 0;
  RunConfig config;
  /// Hash of the resolved run keys, dataset keys and seed.
  std::string config_hash;
  std::string resolved_config;
};

/// Axes x seeds, first axis varying slowest and seeds fastest.
std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec);

struct MetricsRecord {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  EpochMetrics metrics;
};

std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_metrics_line(std::string_view line);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);
/// Epoch metrics of one run in file order; the first run when `run_id` is empty.
std::vector<EpochMetrics> metrics_for_run(std::span<const MetricsRecord> records,
                                          const std::string& run_id = {});

/// Median of the last `count` values (fewer if the series is shorter).
std::optional<double> median_of_final(std::span<const double> values, std::size_t count = 5);

struct RunOutcome {
  PlannedRun plan;
  bool ok = false;
  std::string error;
  std::vector<EpochMetrics> metrics;
  std::optional<double> final_accuracy;
  std::optional<double> final_accuracy_vote;
};

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<RunOutcome> runs;
  bool all_ok() const;
};

/// The configured output directory, placed under $SBA_OUTPUT_ROOT when that
/// is set and the directory is relative.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

/// Executes every planned run and writes, under the output directory:
///   runs/<id>/metrics.jsonl  one record per epoch, appended as it finishes
///   runs/<id>/config.txt     resolved configuration
///   runs/<id>/model.sba      final checkpoint
///   runs/<id>/error.txt      only for failed runs
///   metrics.jsonl            all records in run order
///   summary.csv              one row per run
/// A failing run is recorded and does not stop its siblings. `data`, when
/// given, replaces loading the configured dataset.
ExperimentResult run_experiment(const ExperimentSpec& spec, const LoadedData* data = nullptr,
                                std::ostream* progress = nullptr);

struct TimeToTarget {
  std::optional<std::size_t> epoch;
  std::optional<double> seconds;  // cumulative training wall clock
  bool reached() const { return epoch.has_value(); }
};

/// First epoch whose argmax test accuracy reaches `target`.
TimeToTarget time_to_target(std::span<const EpochMetrics> metrics, double target);

struct CostRatio {
  TimeToTarget a, b;
  std::optional<double> ratio;  // a.seconds / b.seconds when both reached
  bool reached() const { return ratio.has_value(); }
};

CostRatio cost_ratio(std::span<const EpochMetrics> a, std::span<const EpochMetrics> b,
                     double target);

/// Columns: epoch, train_loss_primary, train_loss_constraint, train_accuracy,
/// test_accuracy_argmax, test_accuracy_vote, augmented_fraction,
/// cumulative_seconds. Missing values are empty cells.
void write_curve(std::span<const EpochMetrics> metrics, const std::filesystem::path& path);

/// One curve file per run id, named <run_id>.csv.
std::vector<std::filesystem::path> emit_curves(std::span<const MetricsRecord> records,
                                               const std::filesystem::path& out_dir);

}  // namespace sba
