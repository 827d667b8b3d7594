// SPDX-License-Identifier: Apache-2.0
//
// ExperimentConfig is the full description of one distillation study:
// dataset, teacher pool, student, strategy/loss settings, hyperparameters
// and seeds. Everything a report contains is a function of it.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdsel/mlp.hpp"
#include "kdsel/synthgen.hpp"
#include "kdsel/train.hpp"

namespace kdsel {

struct TeacherRecipe {
  enum class Kind { Trained, Overconfident, External };

  std::string id;
  Kind kind{Kind::Trained};

  // Trained
  std::vector<int> hidden{128};
  Activation activation{Activation::Tanh};
  int epochs{60};
  double lr{0.1};
  int batch_size{32};
  Strategy strategy{Strategy::FT};
  std::optional<std::uint64_t> seed;  // defaults to a hash of the id

  // Overconfident: wraps another (trained) teacher
  std::string base;
  double margin{0.0};

  // External: pre-exported logits over the training split (and optionally test)
  std::filesystem::path logits;
  std::filesystem::path test_logits;

  std::uint64_t effective_seed() const;
};

std::string_view to_string(TeacherRecipe::Kind k);

struct StudentRecipe {
  std::vector<int> hidden{8};
  Activation activation{Activation::Tanh};

  /// e.g. "mlp[8]-tanh"
  std::string describe() const;
};

struct ExperimentConfig {
  std::string name{"default"};
  // data: either generated from these settings or read from a `gen-data` directory
  DatasetSpec dataset;
  double test_fraction{0.4};
  std::filesystem::path dataset_path;
  // teacher pool, student architecture, objective and optimiser
  std::vector<TeacherRecipe> teachers;
  StudentRecipe student;
  Hyper hyper;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::optional<MetricMode> mode;
  bool ce_baseline{true};
  int ssp_k{3};
  int topk{5};

  MetricMode effective_mode() const { return mode.value_or(default_mode(hyper.strategy)); }
  const TeacherRecipe* find_teacher(const std::string& id) const;

  /// Throws ConfigError describing the first problem found.
  void validate() const;
};

/// Parses a config; relative paths resolve against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a of the canonical (key-sorted) JSON form.
std::uint64_t config_hash(const ExperimentConfig& c);

/// Desk-scale default study: 20-class synthetic data, a pool spanning
/// capacity (width 8..512), training length and overconfidence margins.
ExperimentConfig default_config();

}  // namespace kdsel
