// SPDX-License-Identifier: Apache-2.0
//
// End-to-end study: data -> teacher pool -> teacher metrics -> students ->
// rank correlation between each metric and student accuracy.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdsel/config.hpp"
#include "kdsel/stats.hpp"
#include "kdsel/synthgen.hpp"
#include "kdsel/train.hpp"

namespace kdsel {

struct SeedAccuracy {
  std::uint64_t seed{0};
  double accuracy{0.0};
  bool operator==(const SeedAccuracy&) const = default;
};

struct TeacherResult {
  std::string id;
  std::string kind;  // trained | overconfident | external
  std::vector<MetricSummary> summaries;  // TAC, SSP, R12
  // listing of the first training sample's top-k raw logits
  std::vector<double> topk_values;
  std::vector<std::int64_t> topk_indices;
  // mean over training samples of the sorted top-k raw logits
  std::vector<double> mean_topk;
  std::vector<SeedAccuracy> accuracies;
  double mean_accuracy{0.0};

  const MetricSummary& summary(MetricKind k) const;
};

struct MetricResult {
  MetricKind kind{MetricKind::R12};
  TeacherRanking ranking;
  double selected_accuracy{0.0};
  std::optional<CorrelationEntry> correlation;
  std::string correlation_note;  // why the correlation is absent
};

struct Provenance {
  std::string config_hash;
  std::string toolkit_version;
  std::string timestamp;  // UTC, ISO 8601; excluded from determinism checks
};

struct ExperimentReport {
  std::string name;
  // grouping keys for cross-experiment tables
  std::string dataset_id;
  std::string student;
  std::string strategy;
  std::string mode;
  std::vector<std::uint64_t> seeds;
  std::vector<TeacherResult> teachers;  // ordered by id
  std::vector<MetricResult> metrics;    // TAC, SSP, R12
  std::vector<SeedAccuracy> ce_baseline;  // empty when disabled
  std::optional<double> ce_mean;
  std::vector<std::string> warnings;
  Provenance provenance;

  const TeacherResult& teacher(const std::string& id) const;
  const MetricResult& metric(MetricKind k) const;
};

struct PipelineOptions {
  int jobs{1};
  /// Filled into the report; leave empty for reproducible test fixtures.
  std::string timestamp;
};

/// Generates the configured synthetic split, or loads it from dataset_path.
TrainTestSplit load_experiment_data(const ExperimentConfig& config, std::string* dataset_id = nullptr);

/// Trains a `Trained` recipe on labels only.
Mlp train_teacher(const TeacherRecipe& recipe, const TrainTestSplit& data);

struct PreparedTeacher {
  const TeacherRecipe* recipe{nullptr};
  std::optional<TeacherModel> model;  // absent for external teachers
  LogitMatrix train_logits;
  LogitMatrix test_logits;  // empty when unavailable
};

/// Resolves teachers in config order, training every live base once.
/// `only` restricts the result to the listed ids.
std::vector<PreparedTeacher> prepare_teachers(const ExperimentConfig& config, const TrainTestSplit& data, int jobs = 1,
                                              std::span<const std::string> only = {});

ExperimentReport run_pipeline(const ExperimentConfig& config, const PipelineOptions& options = {});

/// Cross-experiment summaries: bucket shares, mean |rho| per dataset and
/// the accuracy each metric's pick delivered.
struct BucketShares {
  double weak{0.0};
  double modest{0.0};
  double strong{0.0};  // percentages
  std::size_t n{0};
};

struct SelectionRow {
  std::string report;
  std::string dataset_id;
  std::optional<double> ce_mean;
  std::map<MetricKind, double> selected_accuracy;
  std::map<MetricKind, std::string> selected_teacher;
};

struct AggregateTables {
  std::map<MetricKind, BucketShares> buckets;
  std::map<std::string, std::map<MetricKind, double>> mean_abs_rho_by_dataset;
  std::map<MetricKind, double> mean_abs_rho_overall;
  std::vector<SelectionRow> selection;
};

/// Needs at least one report carrying a correlation entry.
AggregateTables correlate_experiments(std::span<const ExperimentReport> reports);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The lowest-index
/// exception, if any, is rethrown after all workers stop.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace kdsel
