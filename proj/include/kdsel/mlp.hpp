// SPDX-License-Identifier: Apache-2.0
//
// Small fully connected classifier with hand-written backpropagation.
// Rows of every batch are samples: hidden = act(x * W + b).
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kdsel/numerics.hpp"

namespace kdsel {

enum class Activation { Tanh, Relu };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;

  Eigen::Index fan_in() const { return weight.rows(); }
  Eigen::Index fan_out() const { return weight.cols(); }
  Eigen::Index parameter_count() const { return weight.size() + bias.size(); }
};

/// Per-layer gradients, same shapes as the model's layers.
using Gradients = std::vector<DenseLayer>;

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
  LogitMatrix logits;
};

class Mlp {
 public:
  Mlp() = default;

  /// sizes = {input, hidden..., classes}; weights drawn from the seeded stream
  /// (Glorot-uniform for tanh, He-uniform for relu), biases zero.
  Mlp(std::vector<int> sizes, Activation activation, std::uint64_t seed);

  static Mlp zeros(std::vector<int> sizes, Activation activation);

  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return sizes_.front(); }
  int n_classes() const { return sizes_.back(); }

  std::span<const DenseLayer> layers() const { return layers_; }
  std::span<DenseLayer> layers() { return layers_; }
  const DenseLayer& head() const { return layers_.back(); }

  LogitMatrix forward(const Matrix& batch) const;
  ForwardCache forward_cached(const Matrix& batch) const;

  /// Parameter gradients given dLoss/dLogits for the cached batch.
  Gradients backward(const ForwardCache& cache, const Matrix& dlogits) const;

  Eigen::Index parameter_count() const;
  /// Layer by layer: weight (column-major) then bias.
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);
  static Vector flatten(std::span<const DenseLayer> layers);

  bool operator==(const Mlp& other) const;

 private:
  void check_input(const Matrix& batch) const;

  std::vector<int> sizes_;
  Activation activation_{Activation::Tanh};
  std::vector<DenseLayer> layers_;
};

/// Wraps a base model and adds `margin` to each row's argmax logit. Argmax
/// is unchanged; the top-1/top-2 ratio grows wherever P2 > 0.
class TeacherModel {
 public:
  TeacherModel() = default;
  explicit TeacherModel(Mlp base, double margin = 0.0);

  const Mlp& base() const { return base_; }
  double margin() const { return margin_; }

  LogitMatrix logits(const Matrix& batch) const;

 private:
  Mlp base_;
  double margin_{0.0};
};

TeacherModel make_overconfident(const Mlp& teacher, double margin);
TeacherModel make_overconfident(const TeacherModel& teacher, double margin);

/// Adds `margin` to the first-max entry of each row.
LogitMatrix sharpen_top1(LogitMatrix logits, double margin);

}  // namespace kdsel
