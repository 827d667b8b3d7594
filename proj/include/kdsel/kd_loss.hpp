// SPDX-License-Identifier: Apache-2.0
//
// Distillation objective
//   L = CE(softmax(s), y) + beta * tau^2 * KL(softmax(t / tau) || softmax(s / tau))
// averaged over the batch, with its analytic gradient w.r.t. student logits.
#pragma once

#include <functional>
#include <span>

#include "kdsel/mlp.hpp"

namespace kdsel {

struct LossAndGrad {
  double loss{0.0};
  Matrix grad;  // dLoss / dStudentLogits
};

struct KdLoss {
  double loss{0.0};
  double ce{0.0};
  double kl{0.0};  // tau^2-scaled, before beta
  Matrix grad;
};

LossAndGrad cross_entropy(const LogitMatrix& student, std::span<const Label> labels);

/// tau^2 * KL(teacher || student) on softened distributions, batch mean.
LossAndGrad distill_kl(const LogitMatrix& student, const LogitMatrix& teacher, double tau);

/// Full objective. `teacher` may be empty when beta == 0.
KdLoss kd_loss(const LogitMatrix& student, const LogitMatrix& teacher, std::span<const Label> labels, double beta,
               double tau = 1.0);

/// Scalar objective over a flat parameter vector; fills `grad` when non-null.
using Objective = std::function<double(const Vector& params, Vector* grad)>;

/// Gradients smaller than this are compared absolutely rather than relatively.
inline constexpr double kGradCheckFloor = 1e-6;

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// numeric by central differences. Zero parameters pass vacuously (returns 0).
double grad_check(const Vector& params, const Objective& objective, double eps = 1e-5);

using LogitObjective = std::function<LossAndGrad(const LogitMatrix& logits)>;

/// Checks backpropagation of `loss` through every parameter of `model`.
double grad_check(const Mlp& model, const Matrix& batch, const LogitObjective& loss, double eps = 1e-5);

}  // namespace kdsel
