// SPDX-License-Identifier: Apache-2.0
#include "kdsel/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kdsel {

std::string_view to_string(CorrelationBucket bucket) {
  switch (bucket) {
    case CorrelationBucket::Weak: return "Weak";
    case CorrelationBucket::Modest: return "Modest";
    case CorrelationBucket::Strong: return "Strong";
  }
  return "?";
}

CorrelationBucket bucket_from_string(std::string_view name) {
  if (name == "Weak") return CorrelationBucket::Weak;
  if (name == "Modest") return CorrelationBucket::Modest;
  if (name == "Strong") return CorrelationBucket::Strong;
  throw InvalidInput("unknown correlation bucket: " + std::string(name));
}

Vector rank_with_ties(const Vector& x) {
  if (x.size() < 1) throw EmptyInput("rank of an empty vector");
  if (!x.allFinite()) throw InvalidInput("rank input is not finite");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });

  Vector ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x(order[j + 1]) == x(order[i])) ++j;
    // positions i..j (0-based) hold ranks i+1..j+1
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks(order[t]) = shared;
    i = j + 1;
  }
  return ranks;
}

double pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw InvalidInput("correlation inputs differ in length");
  if (x.size() < 2) throw InvalidInput("correlation needs at least 2 points");
  const double mx = seq_mean(x);
  const double my = seq_mean(y);
  SeqAccumulator<double> sxy, sxx, syy;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double dx = x(i) - mx;
    const double dy = y(i) - my;
    sxy.add(dx * dy);
    sxx.add(dx * dx);
    syy.add(dy * dy);
  }
  if (sxx.sum() <= 0.0 || syy.sum() <= 0.0) throw UndefinedCorrelation("correlation undefined: constant input");
  return std::clamp(sxy.sum() / std::sqrt(sxx.sum() * syy.sum()), -1.0, 1.0);
}

double spearman(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw InvalidInput("spearman: inputs differ in length");
  if (x.size() < 3) throw InvalidInput("spearman: need at least 3 points");
  return pearson(rank_with_ties(x), rank_with_ties(y));
}

CorrelationBucket classify_correlation(double rho) {
  const double a = std::abs(rho);
  if (a <= 0.50) return CorrelationBucket::Weak;
  if (a <= 0.70) return CorrelationBucket::Modest;
  return CorrelationBucket::Strong;
}

CorrelationEntry correlation_entry(MetricKind kind, const Vector& metric_values, const Vector& accuracies) {
  CorrelationEntry e;
  e.kind = kind;
  e.rho = spearman(metric_values, accuracies);
  e.abs_rho = std::abs(e.rho);
  e.bucket = classify_correlation(e.rho);
  e.n_points = static_cast<std::size_t>(metric_values.size());
  return e;
}

TeacherRanking rank_teachers(const std::map<std::string, MetricSummary>& summaries, MetricKind kind) {
  if (summaries.size() < 2) throw InvalidInput("ranking needs at least 2 teachers");
  std::vector<std::pair<std::string, double>> items;
  for (const auto& [id, s] : summaries) {
    if (s.kind != kind) throw InvalidInput("ranking: summary for '" + id + "' is " + std::string(to_string(s.kind)));
    items.emplace_back(id, s.mean);
  }
  // map iteration is already id-ordered; stable_sort keeps that for ties
  std::stable_sort(items.begin(), items.end(), [kind](const auto& a, const auto& b) {
    return lower_is_better(kind) ? a.second < b.second : a.second > b.second;
  });
  TeacherRanking r;
  r.kind = kind;
  for (auto& [id, v] : items) r.order.push_back(id);
  r.selected = r.order.front();
  return r;
}

}  // namespace kdsel
