// SPDX-License-Identifier: Apache-2.0
#include "kdsel/metrics.hpp"

#include <string>

namespace kdsel {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::TAC: return "TAC";
    case MetricKind::SSP: return "SSP";
    case MetricKind::R12: return "R12";
  }
  return "?";
}

MetricKind metric_kind_from_string(std::string_view name) {
  if (name == "TAC" || name == "tac") return MetricKind::TAC;
  if (name == "SSP" || name == "ssp") return MetricKind::SSP;
  if (name == "R12" || name == "r12") return MetricKind::R12;
  throw InvalidInput("unknown metric kind: " + std::string(name));
}

std::string_view to_string(MetricMode mode) { return mode == MetricMode::Static ? "static" : "online"; }

MetricMode metric_mode_from_string(std::string_view name) {
  if (name == "static") return MetricMode::Static;
  if (name == "online") return MetricMode::Online;
  throw InvalidInput("unknown metric mode: " + std::string(name));
}

double tac(std::span<const Label> predicted, std::span<const Label> truth) {
  if (predicted.size() != truth.size()) throw InvalidInput("TAC: label lists differ in length");
  if (predicted.empty()) throw EmptyInput("TAC: no samples");
  SeqAccumulator<double> hits;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits.add(predicted[i] == truth[i] ? 1.0 : 0.0);
  return hits.mean();
}

MetricAccumulator::MetricAccumulator(MetricKind kind, int ssp_k) : kind_(kind), ssp_k_(ssp_k) {
  if (kind_ == MetricKind::SSP && ssp_k_ < 2) throw InvalidArgument("SSP: K must be >= 2");
}

void MetricAccumulator::begin_epoch() { epochs_.emplace_back(); }

void MetricAccumulator::check_batch(Eigen::Index rows, Eigen::Index cols, std::size_t n_labels) {
  if (cols < 2) throw InvalidInput("logit batch needs at least 2 classes");
  if (n_classes_ < 0)
    n_classes_ = cols;
  else if (cols != n_classes_)
    throw InvalidInput("logit batches disagree on class count");
  if (kind_ == MetricKind::TAC && n_labels != static_cast<std::size_t>(rows))
    throw InvalidInput("TAC: labels do not match batch rows");
  if (epochs_.empty()) epochs_.emplace_back();
}

void MetricAccumulator::include(double value) {
  total_.add(value);
  epochs_.back().add(value);
}

MetricSummary MetricAccumulator::finish() const {
  if (total_.empty())
    throw DegenerateAggregate(std::string(to_string(kind_)) + ": no sample was included in the aggregate");
  MetricSummary s;
  s.kind = kind_;
  s.mean = total_.mean();
  s.n_included = total_.count();
  s.n_skipped = skipped_;
  for (const auto& e : epochs_) s.per_epoch_means.push_back(e.empty() ? std::nullopt : std::optional(e.mean()));
  return s;
}

MetricSummary aggregate(MetricKind kind, std::span<const Epoch> epochs, int ssp_k) {
  MetricAccumulator acc(kind, ssp_k);
  for (const auto& epoch : epochs) {
    acc.begin_epoch();
    for (const auto& batch : epoch) acc.add_batch(batch.logits, batch.labels);
  }
  return acc.finish();
}

MetricSummary aggregate_static(MetricKind kind, const LogitMatrix& logits, std::span<const Label> labels,
                               Eigen::Index batch_size, int ssp_k) {
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (kind == MetricKind::TAC && labels.size() != static_cast<std::size_t>(logits.rows()))
    throw InvalidInput("TAC: labels do not match logit rows");
  MetricAccumulator acc(kind, ssp_k);
  acc.begin_epoch();
  for (Eigen::Index start = 0; start < logits.rows(); start += batch_size) {
    const Eigen::Index n = std::min(batch_size, logits.rows() - start);
    const auto lab = kind == MetricKind::TAC ? labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n))
                                             : std::span<const Label>{};
    acc.add_batch(logits.middleRows(start, n), lab);
  }
  return acc.finish();
}

MetricSummary merge_summaries(std::span<const MetricSummary> parts) {
  if (parts.empty()) throw EmptyInput("merge of zero summaries");
  MetricSummary out;
  out.kind = parts.front().kind;
  SeqAccumulator<double> weighted;
  for (const auto& p : parts) {
    if (p.kind != out.kind) throw InvalidInput("merge of summaries with different metric kinds");
    weighted.add(p.mean * static_cast<double>(p.n_included));
    out.n_included += p.n_included;
    out.n_skipped += p.n_skipped;
    out.per_epoch_means.insert(out.per_epoch_means.end(), p.per_epoch_means.begin(), p.per_epoch_means.end());
  }
  if (out.n_included == 0) throw DegenerateAggregate("merged summary has no included sample");
  out.mean = weighted.sum() / static_cast<double>(out.n_included);
  return out;
}

}  // namespace kdsel
