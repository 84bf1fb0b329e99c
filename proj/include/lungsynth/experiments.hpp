#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/corpus.hpp"
#include "lungsynth/downstream.hpp"
#include "lungsynth/localizer.hpp"
#include "lungsynth/patch_classifier.hpp"

namespace lungsynth {

class Config;

inline constexpr const char* kVersion = "0.1.0";

// ---- Folds ----

struct SliceKey {
  std::string patient_id;
  OriginTag origin = OriginTag::kReal;
};

struct FoldPartition {
  int fold = 0;
  std::set<std::string> test_patients;
  std::vector<std::size_t> train;     // indices into the input
  std::vector<std::size_t> test;      // real slices of test patients only
  std::vector<std::size_t> excluded;  // synthetic slices derived from test patients
};

// Seeded shuffle of the sorted real patients, dealt round-robin into k
// folds. Synthetic slices go to the train side of every fold except the one
// that tests their source patient. Throws ConfigError if there are fewer
// real patients than folds.
std::vector<FoldPartition> kfold_partition(std::span<const SliceKey> slices, int k, std::uint64_t seed);

template <typename T>
std::vector<FoldPartition> kfold_partition(const std::vector<T>& items, int k, std::uint64_t seed) {
  std::vector<SliceKey> keys;
  keys.reserve(items.size());
  for (const auto& it : items) keys.push_back({it.patient_id, it.origin});
  return kfold_partition(std::span<const SliceKey>(keys), k, seed);
}

// ---- Experiment matrix ----

enum class Task { kDetection, kLocalization };
std::string to_string(Task t);
Task parse_task(const std::string& text);
// Roman numeral used in the report table.
std::string task_numeral(Task t);

struct MatrixConfig {
  std::filesystem::path real_dir;
  std::map<std::string, std::filesystem::path> synthetic;  // experiment -> split dir
  std::vector<std::string> experiments{"A", "B", "C"};
  std::vector<Task> tasks{Task::kDetection, Task::kLocalization};
  int folds = 10;
  std::vector<double> iou_thresholds{0.5, 0.6, 0.7};
  PatchOptions patches;
  PatchClassifierConfig classifier;
  LocalizerConfig localizer;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::filesystem::path out_dir;

  // Experiment A uses no synthetic data; every other experiment needs an
  // entry in `synthetic` pointing at an existing split. Throws ConfigError
  // listing every missing artifact.
  void validate() const;
  // [matrix] real, synthetic_<x>, experiments, tasks, folds, iou_thresholds,
  // out; [task_i] patch options; [task_i.model]; [task_ii.model]. Relative
  // paths resolve against base_dir.
  static MatrixConfig from_config(const Config& cfg, const std::filesystem::path& base_dir, std::uint64_t seed);
};

struct FoldResult {
  int fold = 0;
  std::string experiment;
  Task task = Task::kDetection;
  std::vector<std::pair<std::string, std::optional<double>>> metrics;
  std::vector<std::string> notes;  // reasons for absent values
};

// Metric names in report order.
std::vector<std::string> metric_names(Task task, std::span<const double> iou_thresholds);
std::string metric_label(const std::string& metric);
// The metric the p-value column refers to.
std::string primary_metric(Task task);

// Writes fold_assignment.csv, folds/ manifests, detections/, fold_results.csv,
// then the report files derived from fold_results.csv and run_manifest.json.
std::vector<FoldResult> run_experiment(const MatrixConfig& config,
                                       const std::function<void(const std::string&)>& log = {});

// fold_results.csv: fold, experiment, task, metric, value ("NA" if absent),
// note.
void write_fold_results(const std::filesystem::path& path, std::span<const FoldResult> results);
std::vector<FoldResult> read_fold_results(const std::filesystem::path& path);

struct SummaryRow {
  Task task = Task::kDetection;
  std::string experiment;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;                  // folds with a defined value
  std::optional<double> p_value;      // vs experiment A; absent for A itself
  bool p_degenerate = false;
};

std::vector<SummaryRow> summarize(std::span<const FoldResult> results);

// Table with rows {I: A..C, II: A..C}, mean +- std in percent per metric and
// the p-value of the primary metric vs A, followed by the C - A deltas.
std::string render_table(std::span<const SummaryRow> summary);

// Reads dir/fold_results.csv and writes summary.csv and report.txt next to
// it. Pure function of the fold file.
void write_report(const std::filesystem::path& dir);

struct AuditResult {
  std::size_t manifests_checked = 0;
  std::size_t synthetic_in_test = 0;
  std::size_t patient_overlaps = 0;
  std::vector<std::string> problems;
  bool ok() const { return synthetic_in_test == 0 && patient_overlaps == 0; }
};

// Scans every dir/folds/fold_<k>_test.csv and fold_<k>_<exp>_train.csv.
AuditResult audit_leakage(const std::filesystem::path& dir);

}  // namespace lungsynth
