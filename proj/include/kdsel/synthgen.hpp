// SPDX-License-Identifier: Apache-2.0
//
// Synthetic fine-grained classification data: superclass Gaussian clusters
// whose subclasses sit a small offset apart.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kdsel/numerics.hpp"

namespace kdsel {

struct DatasetSpec {
  int n_super{5};
  int n_sub_per_super{4};
  int dim{16};
  double coarse_spread{6.0};  // typical distance between superclass means
  double fine_offset{2.2};    // typical distance between sibling subclass means
  double noise_sigma{1.0};
  int samples_per_class{100};
  std::uint64_t seed{1};

  int n_classes() const { return n_super * n_sub_per_super; }
  /// Throws InvalidInput on inconsistent values.
  void validate() const;

  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  Matrix features;  // samples x dim
  std::vector<Label> labels;
  int n_classes{0};
  std::vector<std::pair<int, int>> class_map;  // class -> (super, sub)
  Matrix class_means;                          // generative means, n_classes x dim

  Eigen::Index size() const { return features.rows(); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

/// Class-major rows: all samples of class 0, then class 1, ...
/// Bit-identical for identical specs.
Dataset generate(const DatasetSpec& spec);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Stratified per class; deterministic from `seed`.
TrainTestSplit split(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Per-feature affine map fitted on one matrix and applied to others.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& features);
  Matrix apply(const Matrix& features) const;
};

/// Fits on train, applies to both splits.
void standardize(TrainTestSplit& s);

/// Desk-scale default: generate, split 60/40 per class, standardize.
TrainTestSplit make_default_split(const DatasetSpec& spec, double test_fraction = 0.4);

/// Directory layout: dataset.json, {train,test}.features.lgts(+.json), {train,test}.labels
void save_dataset(const std::filesystem::path& dir, const TrainTestSplit& s, const std::string& dataset_id,
                  const nlohmann::json& provenance = {});
TrainTestSplit load_dataset(const std::filesystem::path& dir, std::string* dataset_id = nullptr);

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

}  // namespace kdsel
