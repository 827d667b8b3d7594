// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "kdsel/checkpoint.hpp"
#include "kdsel/logit_io.hpp"
#include "kdsel/kd_loss.hpp"
#include "kdsel/metrics.hpp"
#include "oracles.hpp"

#include <filesystem>

using namespace kdsel;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double sigma = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sigma);
  return m;
}

std::vector<Label> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<Label> y(n);
  for (auto& l : y) l = static_cast<Label>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

// Loop-by-loop forward pass, independent of Eigen products.
std::vector<std::vector<double>> forward_oracle(const Mlp& m, const Matrix& x) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> h(x.row(r).data(), x.row(r).data() + x.cols());
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      const auto& layer = m.layers()[l];
      std::vector<double> next(static_cast<std::size_t>(layer.fan_out()));
      for (Eigen::Index j = 0; j < layer.fan_out(); ++j) {
        long double s = layer.bias(j);
        for (Eigen::Index i = 0; i < layer.fan_in(); ++i) s += h[static_cast<std::size_t>(i)] * layer.weight(i, j);
        double v = static_cast<double>(s);
        if (l + 1 < m.layers().size()) v = m.activation() == Activation::Tanh ? std::tanh(v) : std::max(v, 0.0);
        next[static_cast<std::size_t>(j)] = v;
      }
      h = std::move(next);
    }
    out.push_back(h);
  }
  return out;
}

// Textbook CE + beta * tau^2 * KL, no shared helpers with the library.
double loss_oracle(const Matrix& s, const Matrix& t, const std::vector<Label>& y, double beta, double tau) {
  long double total = 0;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    oracle::Row srow(s.row(r).data(), s.row(r).data() + s.cols()), trow(t.row(r).data(), t.row(r).data() + t.cols());
    const auto p = oracle::softmax(srow);
    total += -std::log(p[y[static_cast<std::size_t>(r)]]);
    for (auto& v : srow) v /= tau;
    for (auto& v : trow) v /= tau;
    const auto ps = oracle::softmax(srow), pt = oracle::softmax(trow);
    long double kl = 0;
    for (std::size_t c = 0; c < pt.size(); ++c) kl += pt[c] * std::log(pt[c] / ps[c]);
    total += beta * tau * tau * kl;
  }
  return static_cast<double>(total / s.rows());
}

}  // namespace

TEST_CASE("forward: zero model gives zero logits") {
  const auto m = Mlp::zeros({3, 4, 5}, Activation::Tanh);
  Rng rng(1);
  const auto logits = m.forward(random_matrix(rng, 6, 3));
  CHECK(logits.rows() == 6);
  CHECK(logits.cols() == 5);
  CHECK(logits.isZero(0.0));
}

TEST_CASE("forward: single linear layer on a basis vector picks a weight row") {
  auto m = Mlp::zeros({3, 4}, Activation::Relu);
  Rng rng(2);
  m.layers()[0].weight = random_matrix(rng, 3, 4);
  Matrix e = Matrix::Zero(1, 3);
  e(0, 1) = 1.0;
  CHECK(m.forward(e).row(0) == Eigen::RowVectorXd(m.layers()[0].weight.row(1)));
  CHECK_THROWS_AS(m.forward(Matrix::Zero(1, 2)), InvalidInput);
}

TEST_CASE("forward matches a loop re-implementation") {
  Rng rng(3);
  for (auto act : {Activation::Tanh, Activation::Relu}) {
    Mlp m({5, 7, 6, 4}, act, 99);
    for (auto& l : m.layers()) l.bias = random_matrix(rng, 1, l.fan_out(), 0.3);
    const Matrix x = random_matrix(rng, 8, 5);
    const auto got = m.forward(x);
    const auto want = forward_oracle(m, x);
    for (Eigen::Index r = 0; r < 8; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) CHECK(std::abs(got(r, c) - want[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) < 1e-12);
  }
}

TEST_CASE("Mlp construction is seed-deterministic and flat parameters round-trip") {
  Mlp a({4, 8, 3}, Activation::Tanh, 5), b({4, 8, 3}, Activation::Tanh, 5), c({4, 8, 3}, Activation::Tanh, 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.parameter_count() == 4 * 8 + 8 + 8 * 3 + 3);
  Mlp d = Mlp::zeros({4, 8, 3}, Activation::Tanh);
  d.set_flat_parameters(a.flat_parameters());
  CHECK(d == a);
  CHECK_THROWS_AS(Mlp({4}, Activation::Tanh, 1), InvalidInput);
  CHECK_THROWS_AS(Mlp({4, 1}, Activation::Tanh, 1), InvalidInput);
}

TEST_CASE("kd_loss special cases") {
  Rng rng(4);
  const Matrix s = random_matrix(rng, 5, 6);
  const auto y = random_labels(rng, 5, 6);
  const auto same = kd_loss(s, s, y, 1.0, 1.0);
  CHECK(std::abs(same.kl) < 1e-15);
  CHECK(same.loss == doctest::Approx(same.ce).epsilon(1e-15));
  const auto ce = cross_entropy(s, y);
  CHECK(same.grad.isApprox(ce.grad, 1e-15));

  const Matrix t = random_matrix(rng, 5, 6);
  const auto plain = kd_loss(s, t, y, 0.0, 1.0);
  CHECK(plain.loss == ce.loss);
  CHECK(plain.grad == ce.grad);
  CHECK(kd_loss(s, Matrix(), y, 0.0).loss == ce.loss);

  CHECK_THROWS_AS(kd_loss(s, t, y, 1.0, 0.0), InvalidInput);
  CHECK_THROWS_AS(kd_loss(s, random_matrix(rng, 4, 6), y, 1.0), InvalidInput);
  CHECK_THROWS_AS(kd_loss(s, t, std::vector<Label>{0, 1}, 1.0), InvalidInput);
}

TEST_CASE("kd_loss value and logit gradient match independent oracles") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix s = random_matrix(rng, 4, 5, 2.0);
    const Matrix t = random_matrix(rng, 4, 5, 2.0);
    const auto y = random_labels(rng, 4, 5);
    const double beta = rng.uniform(0.0, 2.0);
    const double tau = trial % 2 ? 2.0 : 1.0;
    const auto got = kd_loss(s, t, y, beta, tau);
    CHECK(got.loss >= 0.0);
    CHECK(oracle::rel_err(got.loss, loss_oracle(s, t, y, beta, tau)) < 1e-12);
    double worst = 0;
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        Matrix up = s, down = s;
        up(r, c) += 1e-5;
        down(r, c) -= 1e-5;
        const double numeric = (loss_oracle(up, t, y, beta, tau) - loss_oracle(down, t, y, beta, tau)) / 2e-5;
        worst = std::max(worst, std::abs(numeric - got.grad(r, c)) / std::max({std::abs(numeric), std::abs(got.grad(r, c)), 1e-6}));
      }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad_check: linear model with CE") {
  Rng rng(6);
  Mlp m({4, 3}, Activation::Tanh, 7);
  const Matrix x = random_matrix(rng, 6, 4);
  const auto y = random_labels(rng, 6, 3);
  CHECK(grad_check(m, x, [&](const LogitMatrix& z) { return cross_entropy(z, y); }) < 1e-6);
}

TEST_CASE("grad_check: MLP with the full distillation objective") {
  Rng rng(8);
  Mlp m({4, 6, 5, 3}, Activation::Tanh, 9);
  const Matrix x = random_matrix(rng, 5, 4);
  const Matrix t = random_matrix(rng, 5, 3, 2.0);
  const auto y = random_labels(rng, 5, 3);
  for (double tau : {1.0, 2.0}) {
    const double err = grad_check(m, x, [&](const LogitMatrix& z) {
      auto l = kd_loss(z, t, y, 0.7, tau);
      return LossAndGrad{l.loss, l.grad};
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("grad_check: zero-parameter objective passes vacuously") {
  const Objective f = [](const Vector&, Vector* g) {
    if (g) g->resize(0);
    return 1.0;
  };
  CHECK(grad_check(Vector(), f) == 0.0);
}

TEST_CASE("grad_check detects a wrong gradient") {
  const Objective f = [](const Vector& p, Vector* g) {
    if (g) *g = 3.0 * p;  // true gradient is 2p
    return p.squaredNorm();
  };
  Vector p(2);
  p << 1.0, -2.0;
  CHECK(grad_check(p, f) > 0.1);
}

TEST_CASE("gradient at a perfect-match point is the CE gradient only") {
  Rng rng(10);
  const Matrix s = random_matrix(rng, 3, 4);
  const std::vector<Label> y{0, 1, 2};
  CHECK(kd_loss(s, s, y, 2.5, 2.0).grad.isApprox(cross_entropy(s, y).grad, 1e-14));
}

TEST_CASE("make_overconfident") {
  Mlp base({3, 5, 4}, Activation::Tanh, 11);
  Rng rng(12);
  const Matrix x = random_matrix(rng, 20, 3);
  CHECK(make_overconfident(base, 0.0).logits(x) == base.forward(x));

  LogitMatrix row(1, 2);
  row << 4, 2;
  const auto sharpened = sharpen_top1(row, 2.0);
  CHECK(sharpened(0, 0) == 6.0);
  CHECK(sharpened(0, 1) == 2.0);

  const auto wrapped = make_overconfident(base, 3.0);
  const auto a = base.forward(x), b = wrapped.logits(x);
  CHECK(predict_labels(a) == predict_labels(b));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const auto ra = r12_sample(a.row(r)), rb = r12_sample(b.row(r));
    CHECK(ra.has_value() == rb.has_value());
    if (ra) CHECK(*rb > *ra);
  }
  CHECK_THROWS_AS(make_overconfident(base, -1.0), InvalidInput);
  CHECK(make_overconfident(wrapped, 2.0).margin() == 5.0);
}

TEST_CASE("checkpoint round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "kdsel_ckpt_test";
  std::filesystem::create_directories(dir);
  Checkpoint c{Mlp({4, 6, 3}, Activation::Relu, 13), 1.5, {{"recipe", "t6"}}};
  save_checkpoint(dir / "m.ckpt", c);
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.model == c.model);
  CHECK(back.margin == 1.5);
  CHECK(back.lineage["recipe"] == "t6");

  auto bytes = io::read_file_bytes(dir / "m.ckpt");
  bytes.pop_back();
  io::write_file_bytes(dir / "bad.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ShapeMismatch);
  std::filesystem::remove_all(dir);
}
