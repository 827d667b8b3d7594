// SPDX-License-Identifier: Apache-2.0
#include "kdsel/kd_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kdsel {

LossAndGrad cross_entropy(const LogitMatrix& student, std::span<const Label> labels) {
  if (labels.size() != static_cast<std::size_t>(student.rows())) throw InvalidInput("CE: label count != batch rows");
  if (student.rows() < 1) throw EmptyInput("CE: empty batch");
  const double inv_b = 1.0 / static_cast<double>(student.rows());
  LossAndGrad out{0.0, Matrix(student.rows(), student.cols())};
  SeqAccumulator<double> total;
  for (Eigen::Index r = 0; r < student.rows(); ++r) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]);
    if (y >= student.cols()) throw InvalidInput("CE: label " + std::to_string(y) + " out of range");
    const Vector logp = log_softmax(student.row(r));
    total.add(-logp(y));
    out.grad.row(r) = logp.array().exp().transpose() * inv_b;
    out.grad(r, y) -= inv_b;
  }
  out.loss = total.sum() * inv_b;
  return out;
}

LossAndGrad distill_kl(const LogitMatrix& student, const LogitMatrix& teacher, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("temperature must be positive");
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols())
    throw InvalidInput("KD: student and teacher logits differ in shape");
  if (student.rows() < 1) throw EmptyInput("KD: empty batch");
  const double inv_b = 1.0 / static_cast<double>(student.rows());
  LossAndGrad out{0.0, Matrix(student.rows(), student.cols())};
  SeqAccumulator<double> total;
  for (Eigen::Index r = 0; r < student.rows(); ++r) {
    const Vector log_t = log_softmax(teacher.row(r) / tau);
    const Vector log_s = log_softmax(student.row(r) / tau);
    const Vector p_t = log_t.array().exp();
    double kl = 0.0;
    for (Eigen::Index c = 0; c < p_t.size(); ++c)
      if (p_t(c) > 0.0) kl += p_t(c) * (log_t(c) - log_s(c));
    total.add(tau * tau * std::max(kl, 0.0));
    // d/ds [tau^2 KL] = tau * (p_s - p_t)
    out.grad.row(r) = (tau * inv_b) * (log_s.array().exp() - p_t.array()).transpose();
  }
  out.loss = total.sum() * inv_b;
  return out;
}

KdLoss kd_loss(const LogitMatrix& student, const LogitMatrix& teacher, std::span<const Label> labels, double beta,
               double tau) {
  if (!(beta >= 0.0)) throw InvalidInput("beta must be >= 0");
  if (!(tau > 0.0)) throw InvalidInput("temperature must be positive");
  auto ce = cross_entropy(student, labels);
  KdLoss out{ce.loss, ce.loss, 0.0, std::move(ce.grad)};
  if (beta == 0.0 && teacher.size() == 0) return out;
  auto kl = distill_kl(student, teacher, tau);
  out.kl = kl.loss;
  out.loss = out.ce + beta * kl.loss;
  out.grad += beta * kl.grad;
  return out;
}

double grad_check(const Vector& params, const Objective& objective, double eps) {
  if (params.size() == 0) return 0.0;
  Vector analytic(params.size());
  objective(params, &analytic);
  Vector probe = params;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + eps;
    const double up = objective(probe, nullptr);
    probe(i) = params(i) - eps;
    const double down = objective(probe, nullptr);
    probe(i) = params(i);
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(analytic(i)), std::abs(numeric), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic(i) - numeric) / scale);
  }
  return worst;
}

double grad_check(const Mlp& model, const Matrix& batch, const LogitObjective& loss, double eps) {
  Mlp probe = model;
  const Objective objective = [&](const Vector& params, Vector* grad) {
    probe.set_flat_parameters(params);
    if (!grad) return loss(probe.forward(batch)).loss;
    const auto cache = probe.forward_cached(batch);
    auto lg = loss(cache.logits);
    *grad = Mlp::flatten(probe.backward(cache, lg.grad));
    return lg.loss;
  };
  return grad_check(model.flat_parameters(), objective, eps);
}

}  // namespace kdsel
