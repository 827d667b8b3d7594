// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "kdsel/train.hpp"

using namespace kdsel;

namespace {

// Two classes separated by the hyperplane x0 = 0 with a margin of 1.
Dataset separable_toy() {
  Rng rng(21);
  Dataset d;
  d.n_classes = 2;
  d.class_map = {{0, 0}, {1, 0}};
  d.features.resize(80, 2);
  for (Eigen::Index r = 0; r < 80; ++r) {
    const bool pos = r % 2 == 1;
    d.features(r, 0) = (pos ? 1.0 : -1.0) * (1.0 + rng.uniform());
    d.features(r, 1) = rng.normal();
    d.labels.push_back(pos ? 1 : 0);
  }
  return d;
}

TrainTestSplit small_fine_grained() {
  DatasetSpec s;
  s.n_super = 2;
  s.n_sub_per_super = 3;
  s.dim = 6;
  s.samples_per_class = 40;
  return make_default_split(s);
}

}  // namespace

TEST_CASE("FT with beta = 0 separates a linearly separable toy problem") {
  const auto d = separable_toy();
  Mlp m({2, 8, 2}, Activation::Tanh, 1);
  Hyper h;
  h.beta = 0.0;
  h.epochs = 50;
  h.lr = 0.1;
  h.batch_size = 8;
  const auto trace = train(m, d, d, h);
  CHECK(trace.train_accuracy == 1.0);
  CHECK(trace.epoch_loss.size() == 50);
  CHECK(trace.epoch_loss.back() < trace.epoch_loss.front());
}

TEST_CASE("FZ leaves feature layers bit-identical and trains only the head") {
  const auto s = small_fine_grained();
  Mlp m({6, 16, 6}, Activation::Tanh, 2);
  const Mlp before = m;
  Hyper h;
  h.beta = 0.0;
  h.epochs = 5;
  h.strategy = Strategy::FZ;
  train(m, s.train, s.test, h);
  CHECK(m.layers()[0].weight == before.layers()[0].weight);
  CHECK(m.layers()[0].bias == before.layers()[0].bias);
  CHECK(m.head().weight != before.head().weight);
  CHECK(m.head().parameter_count() == 16 * 6 + 6);
}

TEST_CASE("training is deterministic for a fixed config and seed") {
  const auto s = small_fine_grained();
  Mlp teacher({6, 32, 6}, Activation::Tanh, 3);
  Hyper th;
  th.beta = 0.0;
  th.epochs = 10;
  train(teacher, s.train, s.test, th);

  for (auto strategy : {Strategy::FT, Strategy::FZ, Strategy::AUG_KD}) {
    Hyper h;
    h.epochs = 4;
    h.seed = 17;
    h.strategy = strategy;
    const TeacherSource src{TeacherModel(teacher)};
    TrainOptions opt;
    opt.record_teacher_metrics = true;
    Mlp a({6, 8, 6}, Activation::Tanh, 4), b({6, 8, 6}, Activation::Tanh, 4);
    const auto ta = train(a, s.train, s.test, h, &src, opt);
    const auto tb = train(b, s.train, s.test, h, &src, opt);
    CHECK(ta == tb);
    CHECK(a == b);
    REQUIRE(ta.teacher_metrics.size() == 3);
    CHECK(ta.teacher_metrics[2].per_epoch_means.size() == 4);
  }
}

TEST_CASE("online metrics under clean inputs equal the static pass") {
  const auto s = small_fine_grained();
  Mlp teacher({6, 32, 6}, Activation::Tanh, 5);
  Hyper th;
  th.beta = 0.0;
  th.epochs = 10;
  train(teacher, s.train, s.test, th);
  const TeacherSource src{TeacherModel(teacher)};
  Hyper h;
  h.epochs = 3;
  TrainOptions opt;
  opt.record_teacher_metrics = true;
  Mlp st({6, 8, 6}, Activation::Tanh, 6);
  const auto trace = train(st, s.train, s.test, h, &src, opt);
  const auto stat = aggregate_static(MetricKind::SSP, teacher.forward(s.train.features), s.train.labels, 32);
  // same multiset of samples each epoch, different order: equal up to rounding
  CHECK(trace.teacher_metrics[1].mean == doctest::Approx(stat.mean).epsilon(1e-12));
  CHECK(trace.teacher_metrics[1].n_included == 3 * stat.n_included);
}

TEST_CASE("precomputed teacher logits reproduce the live teacher") {
  const auto s = small_fine_grained();
  Mlp teacher({6, 32, 6}, Activation::Tanh, 7);
  Hyper h;
  h.epochs = 3;
  const TeacherSource live{TeacherModel(teacher)};
  const TeacherSource dumped{teacher.forward(s.train.features)};
  Mlp a({6, 8, 6}, Activation::Tanh, 8), b({6, 8, 6}, Activation::Tanh, 8);
  const auto ta = train(a, s.train, s.test, h, &live);
  const auto tb = train(b, s.train, s.test, h, &dumped);
  CHECK(ta.test_accuracy == tb.test_accuracy);
  for (std::size_t i = 0; i < ta.epoch_loss.size(); ++i) CHECK(ta.epoch_loss[i] == doctest::Approx(tb.epoch_loss[i]).epsilon(1e-12));

  Hyper aug = h;
  aug.strategy = Strategy::AUG_KD;
  CHECK_THROWS_AS(train(b, s.train, s.test, aug, &dumped), InvalidInput);
}

TEST_CASE("train contract errors") {
  const auto s = small_fine_grained();
  Mlp m({6, 8, 6}, Activation::Tanh, 9);
  Hyper h;
  h.epochs = 1;
  CHECK_THROWS_AS(train(m, s.train, s.test, h), InvalidInput);  // beta > 0, no teacher
  const TeacherSource src{TeacherModel(m)};
  h.beta = 0.0;
  CHECK_THROWS_AS(train(m, s.train, s.test, h, &src), InvalidInput);  // teacher without beta
  h.epochs = 0;
  CHECK_THROWS_AS(train(m, s.train, s.test, h), InvalidInput);
  Mlp wrong({5, 8, 6}, Activation::Tanh, 9);
  h.epochs = 1;
  CHECK_THROWS_AS(train(wrong, s.train, s.test, h), InvalidInput);
}

TEST_CASE("divergence aborts with a diagnostic") {
  const auto s = small_fine_grained();
  Mlp m({6, 64, 6}, Activation::Relu, 10);
  Hyper h;
  h.beta = 0.0;
  h.lr = 1e6;
  h.epochs = 20;
  CHECK_THROWS_AS(train(m, s.train, s.test, h), Divergence);
}
