// SPDX-License-Identifier: Apache-2.0
//
// Teacher-side metrics computed from raw logits:
//   TAC  teacher accuracy
//   SSP  population std of the 2nd..(K+1)th sorted softmax probabilities
//   R12  ratio of the top two raw logits, P1 / P2
// and their sample-weighted aggregation over batches and epochs.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdsel/numerics.hpp"

namespace kdsel {

enum class MetricKind { TAC, SSP, R12 };

inline constexpr MetricKind kAllMetrics[] = {MetricKind::TAC, MetricKind::SSP, MetricKind::R12};

std::string_view to_string(MetricKind kind);
MetricKind metric_kind_from_string(std::string_view name);

/// How teacher logits are collected. `Static` is one clean pass over the
/// training set; `Online` accumulates whatever the teacher sees while the
/// student trains (required when inputs are augmented).
enum class MetricMode { Static, Online };

std::string_view to_string(MetricMode mode);
MetricMode metric_mode_from_string(std::string_view name);

struct MetricSummary {
  MetricKind kind{MetricKind::R12};
  double mean{0.0};
  std::uint64_t n_included{0};
  std::uint64_t n_skipped{0};
  /// One entry per epoch; empty when the epoch had no included sample.
  std::vector<std::optional<double>> per_epoch_means;

  std::uint64_t total() const { return n_included + n_skipped; }
  double skipped_fraction() const {
    return total() == 0 ? 0.0 : static_cast<double>(n_skipped) / static_cast<double>(total());
  }
  /// Skipped share above 1% makes the R12 mean worth flagging.
  bool skip_warning() const { return skipped_fraction() > 0.01; }

  bool operator==(const MetricSummary&) const = default;
};

/// Fraction of positions where predicted == truth.
double tac(std::span<const Label> predicted, std::span<const Label> truth);

/// Predicted labels (argmax, lower index on ties) for every row.
template <typename Derived>
std::vector<Label> predict_labels(const Eigen::DenseBase<Derived>& logits) {
  std::vector<Label> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out[static_cast<std::size_t>(r)] = static_cast<Label>(argmax(logits.derived().row(r)));
  return out;
}

template <typename Derived>
typename Derived::Scalar ssp_sample(const Eigen::DenseBase<Derived>& row, int k = 3) {
  using Scalar = typename Derived::Scalar;
  if (k < 2) throw InvalidArgument("SSP: K must be >= 2");
  if (row.size() <= k) throw InvalidInput("SSP: need more than K classes");
  const auto sorted = sort_desc_topk(stable_softmax(row), k + 1).values;
  // Work with offsets from the runner-up so that tied probabilities give an
  // exact zero and near ties do not lose digits to cancellation.
  const auto offsets = (sorted.tail(k).array() - sorted(1)).eval();
  const Scalar mu = offsets.sum() / static_cast<Scalar>(k);
  return std::sqrt((offsets - mu).square().sum() / static_cast<Scalar>(k));
}

/// P1 / P2 of the raw logits, or nullopt when P2 <= 0 (ratio loses its meaning).
template <typename Derived>
std::optional<typename Derived::Scalar> r12_sample(const Eigen::DenseBase<Derived>& row) {
  if (row.size() < 2) throw InvalidInput("R12: need at least 2 classes");
  if (!row.derived().allFinite()) throw InvalidInput("R12: non-finite logits");
  const auto top = sort_desc_topk(row, 2).values;
  if (top(1) <= 0) return std::nullopt;
  return top(0) / top(1);
}

/// Top-k raw logits of one row, for listings.
template <typename Derived>
TopK<typename Derived::Scalar> summarize_topk(const Eigen::DenseBase<Derived>& row, Eigen::Index k = 5) {
  return sort_desc_topk(row, k);
}

/// Streams batches in global sample order and keeps a compensated,
/// sample-weighted mean. The result does not depend on batch boundaries.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(MetricKind kind, int ssp_k = 3);

  MetricKind kind() const { return kind_; }

  /// Opens a new epoch. Batches added before the first call belong to epoch 0.
  void begin_epoch();

  template <typename Derived>
  void add_batch(const Eigen::DenseBase<Derived>& logits, std::span<const Label> labels = {}) {
    check_batch(logits.rows(), logits.cols(), labels.size());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const auto row = logits.derived().row(r);
      switch (kind_) {
        case MetricKind::TAC:
          include(static_cast<Label>(argmax(row)) == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0);
          break;
        case MetricKind::SSP:
          include(static_cast<double>(ssp_sample(row, ssp_k_)));
          break;
        case MetricKind::R12:
          if (const auto ratio = r12_sample(row))
            include(static_cast<double>(*ratio));
          else
            ++skipped_;
          break;
      }
    }
  }

  /// Throws DegenerateAggregate when nothing was included.
  MetricSummary finish() const;

 private:
  void check_batch(Eigen::Index rows, Eigen::Index cols, std::size_t n_labels);
  void include(double value);

  MetricKind kind_;
  int ssp_k_;
  Eigen::Index n_classes_{-1};
  SeqAccumulator<double> total_;
  std::vector<SeqAccumulator<double>> epochs_;
  std::uint64_t skipped_{0};
};

struct LogitBatch {
  LogitMatrix logits;
  std::vector<Label> labels;
};

using Epoch = std::vector<LogitBatch>;

/// Sample-weighted mean of a metric over every batch of every epoch.
MetricSummary aggregate(MetricKind kind, std::span<const Epoch> epochs, int ssp_k = 3);

/// Single pass (static mode): one epoch split into batches of `batch_size`.
MetricSummary aggregate_static(MetricKind kind, const LogitMatrix& logits, std::span<const Label> labels,
                               Eigen::Index batch_size, int ssp_k = 3);

/// Combines summaries of the same kind (e.g. one per seed) in the given order.
MetricSummary merge_summaries(std::span<const MetricSummary> parts);

}  // namespace kdsel
