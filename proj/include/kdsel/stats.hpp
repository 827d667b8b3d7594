// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kdsel/metrics.hpp"

namespace kdsel {

enum class CorrelationBucket { Weak, Modest, Strong };

std::string_view to_string(CorrelationBucket bucket);
CorrelationBucket bucket_from_string(std::string_view name);

struct CorrelationEntry {
  MetricKind kind{MetricKind::R12};
  double rho{0.0};
  double abs_rho{0.0};
  CorrelationBucket bucket{CorrelationBucket::Weak};
  std::size_t n_points{0};
};

struct TeacherRanking {
  MetricKind kind{MetricKind::R12};
  std::vector<std::string> order;  // best first
  std::string selected;
};

/// 1-based ranks; tied values share the average of the ranks they span.
Vector rank_with_ties(const Vector& x);

/// Pearson correlation of two equally long samples.
/// Throws UndefinedCorrelation when either side has zero variance.
double pearson(const Vector& x, const Vector& y);

/// Spearman rho = Pearson correlation of tie-averaged ranks. Needs >= 3 points.
double spearman(const Vector& x, const Vector& y);

/// Weak iff |rho| <= 0.50, Modest iff |rho| <= 0.70, Strong otherwise.
CorrelationBucket classify_correlation(double rho);

CorrelationEntry correlation_entry(MetricKind kind, const Vector& metric_values, const Vector& accuracies);

/// Higher-is-better for TAC and SSP, lower-is-better for R12. Ties go to
/// the lexicographically smaller teacher id.
TeacherRanking rank_teachers(const std::map<std::string, MetricSummary>& summaries, MetricKind kind);

/// Whether a lower value of `kind` marks a better teacher.
constexpr bool lower_is_better(MetricKind kind) { return kind == MetricKind::R12; }

}  // namespace kdsel
