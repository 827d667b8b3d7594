// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "kdsel/kd_loss.hpp"
#include "kdsel/metrics.hpp"
#include "kdsel/synthgen.hpp"

namespace kdsel {

/// FZ: only the final linear layer is trained. FT: everything is trained.
/// AUG_KD: FT plus a second distillation term on jitter-augmented inputs,
/// a structural stand-in for teacher-guided augmentation (TGDA).
enum class Strategy { FZ, FT, AUG_KD };

std::string_view to_string(Strategy s);
/// Human-facing label; AUG_KD reads "AUG-KD (TGDA-structure)".
std::string_view display_name(Strategy s);
Strategy strategy_from_string(std::string_view name);

/// Static for FZ/FT, online for AUG_KD.
MetricMode default_mode(Strategy s);

struct Hyper {
  double beta{1.0};
  double tau{1.0};
  double lr{0.1};
  int epochs{100};
  int batch_size{32};
  std::uint64_t seed{1};
  Strategy strategy{Strategy::FT};
  double aug_sigma{0.3};

  void validate() const;
  bool operator==(const Hyper&) const = default;
};

void to_json(nlohmann::json& j, const Hyper& h);
void from_json(const nlohmann::json& j, Hyper& h);

/// Where distillation targets come from: a live model, or logits exported
/// ahead of time for every training row (same row order).
class TeacherSource {
 public:
  explicit TeacherSource(TeacherModel model) : impl_(std::move(model)) {}
  explicit TeacherSource(LogitMatrix train_logits) : impl_(std::move(train_logits)) {}

  bool has_model() const { return std::holds_alternative<TeacherModel>(impl_); }
  const TeacherModel& model() const { return std::get<TeacherModel>(impl_); }

  /// Logits for `batch`, whose rows are training rows `rows`.
  LogitMatrix logits(const Matrix& batch, std::span<const std::size_t> rows) const;

 private:
  std::variant<TeacherModel, LogitMatrix> impl_;
};

struct TrainOptions {
  /// Accumulate teacher metrics over everything the teacher sees while
  /// the student trains (online mode).
  bool record_teacher_metrics{false};
  int ssp_k{3};
};

struct TrainTrace {
  std::vector<double> epoch_loss;
  /// TAC, SSP, R12 in that order when recorded; empty otherwise.
  std::vector<MetricSummary> teacher_metrics;
  double train_accuracy{0.0};
  double test_accuracy{0.0};

  bool operator==(const TrainTrace& o) const;
};

/// Plain mini-batch gradient descent with a seeded shuffle each epoch.
/// A teacher must be given iff hyper.beta > 0. Throws Divergence on a
/// non-finite loss.
TrainTrace train(Mlp& model, const Dataset& train_set, const Dataset& test_set, const Hyper& hyper,
                 const TeacherSource* teacher = nullptr, const TrainOptions& options = {});

double accuracy(const Mlp& model, const Dataset& data);
double accuracy(const TeacherModel& model, const Dataset& data);

}  // namespace kdsel
