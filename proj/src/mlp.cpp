// SPDX-License-Identifier: Apache-2.0
#include "kdsel/mlp.hpp"

#include <cmath>
#include <string>

namespace kdsel {
namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, Activation a) {
  return a == Activation::Tanh ? Eigen::MatrixXd(pre.array().tanh()) : Eigen::MatrixXd(pre.array().max(0.0));
}

Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& pre, Activation a) {
  if (a == Activation::Tanh) return (1.0 - pre.array().tanh().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw InvalidInput("MLP needs at least input and output sizes");
  for (int s : sizes)
    if (s < 1) throw InvalidInput("MLP layer sizes must be positive");
  if (sizes.back() < 2) throw InvalidInput("MLP needs at least 2 output classes");
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw InvalidInput("unknown activation: " + std::string(name));
}

Mlp::Mlp(std::vector<int> sizes, Activation activation, std::uint64_t seed) : Mlp(zeros(std::move(sizes), activation)) {
  Rng rng(seed);
  for (auto& layer : layers_) {
    const double fan_in = static_cast<double>(layer.fan_in());
    const double fan_out = static_cast<double>(layer.fan_out());
    const double limit = activation_ == Activation::Tanh ? std::sqrt(6.0 / (fan_in + fan_out)) : std::sqrt(6.0 / fan_in);
    // fixed fill order (row-major over fan_in x fan_out) for reproducibility
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.uniform(-limit, limit);
  }
}

Mlp Mlp::zeros(std::vector<int> sizes, Activation activation) {
  check_sizes(sizes);
  Mlp m;
  m.sizes_ = std::move(sizes);
  m.activation_ = activation;
  for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l)
    m.layers_.push_back({Eigen::MatrixXd::Zero(m.sizes_[l], m.sizes_[l + 1]), Eigen::RowVectorXd::Zero(m.sizes_[l + 1])});
  return m;
}

void Mlp::check_input(const Matrix& batch) const {
  if (layers_.empty()) throw InvalidInput("MLP has no layers");
  if (batch.cols() != input_dim())
    throw InvalidInput("batch has " + std::to_string(batch.cols()) + " features, model expects " + std::to_string(input_dim()));
}

LogitMatrix Mlp::forward(const Matrix& batch) const {
  check_input(batch);
  Eigen::MatrixXd h = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd pre = h * layers_[l].weight;
    pre.rowwise() += layers_[l].bias;
    h = l + 1 < layers_.size() ? activate(pre, activation_) : std::move(pre);
  }
  return h;
}

ForwardCache Mlp::forward_cached(const Matrix& batch) const {
  check_input(batch);
  ForwardCache cache;
  Eigen::MatrixXd h = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd pre = h * layers_[l].weight;
    pre.rowwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      h = activate(pre, activation_);
      cache.pre.push_back(std::move(pre));
    } else {
      cache.logits = pre;
    }
  }
  return cache;
}

Gradients Mlp::backward(const ForwardCache& cache, const Matrix& dlogits) const {
  if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols())
    throw InvalidInput("gradient shape does not match cached logits");
  Gradients grads(layers_.size());
  Eigen::MatrixXd delta = dlogits;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    grads[l].weight = cache.inputs[l].transpose() * delta;
    grads[l].bias = delta.colwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = delta * layers_[l].weight.transpose();
      delta = back.cwiseProduct(activation_slope(cache.pre[l - 1], activation_));
    }
  }
  return grads;
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

Vector Mlp::flatten(std::span<const DenseLayer> layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  Vector flat(n);
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    flat.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    flat.segment(k, l.bias.size()) = l.bias.transpose();
    k += l.bias.size();
  }
  return flat;
}

Vector Mlp::flat_parameters() const { return flatten(layers_); }

void Mlp::set_flat_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw InvalidInput("flat parameter vector has the wrong length");
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = flat.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = flat.segment(k, l.bias.size()).transpose();
    k += l.bias.size();
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (sizes_ != other.sizes_ || activation_ != other.activation_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    if (layers_[l].weight != other.layers_[l].weight || layers_[l].bias != other.layers_[l].bias) return false;
  return true;
}

TeacherModel::TeacherModel(Mlp base, double margin) : base_(std::move(base)), margin_(margin) {
  if (!(margin_ >= 0.0) || !std::isfinite(margin_)) throw InvalidInput("overconfidence margin must be finite and >= 0");
}

LogitMatrix TeacherModel::logits(const Matrix& batch) const { return sharpen_top1(base_.forward(batch), margin_); }

TeacherModel make_overconfident(const Mlp& teacher, double margin) { return TeacherModel(teacher, margin); }

TeacherModel make_overconfident(const TeacherModel& teacher, double margin) {
  if (!(margin >= 0.0)) throw InvalidInput("overconfidence margin must be >= 0");
  return TeacherModel(teacher.base(), teacher.margin() + margin);
}

LogitMatrix sharpen_top1(LogitMatrix logits, double margin) {
  if (margin == 0.0) return logits;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) logits(r, argmax(logits.row(r))) += margin;
  return logits;
}

}  // namespace kdsel
