// SPDX-License-Identifier: Apache-2.0
#include "kdsel/train.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace kdsel {
namespace {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void accumulate(Gradients& into, const Gradients& add, double weight) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight += weight * add[l].weight;
    into[l].bias += weight * add[l].bias;
  }
}

bool grads_finite(const Gradients& g) {
  for (const auto& l : g)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::FZ: return "FZ";
    case Strategy::FT: return "FT";
    case Strategy::AUG_KD: return "AUG_KD";
  }
  return "?";
}

std::string_view display_name(Strategy s) { return s == Strategy::AUG_KD ? "AUG-KD (TGDA-structure)" : to_string(s); }

Strategy strategy_from_string(std::string_view name) {
  if (name == "FZ") return Strategy::FZ;
  if (name == "FT") return Strategy::FT;
  if (name == "AUG_KD" || name == "AUG-KD") return Strategy::AUG_KD;
  throw InvalidInput("unknown strategy: " + std::string(name));
}

MetricMode default_mode(Strategy s) { return s == Strategy::AUG_KD ? MetricMode::Online : MetricMode::Static; }

void Hyper::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidInput("beta must be finite and >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidInput("tau must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("lr must be positive");
  if (epochs < 1) throw InvalidInput("epochs must be >= 1");
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (strategy == Strategy::AUG_KD && !(aug_sigma >= 0.0)) throw InvalidInput("aug_sigma must be >= 0");
}

void to_json(nlohmann::json& j, const Hyper& h) {
  j = nlohmann::json{{"beta", h.beta},     {"tau", h.tau},
                     {"lr", h.lr},         {"epochs", h.epochs},
                     {"batch_size", h.batch_size}, {"seed", h.seed},
                     {"strategy", std::string(to_string(h.strategy))}, {"aug_sigma", h.aug_sigma}};
}

void from_json(const nlohmann::json& j, Hyper& h) {
  Hyper d;
  h.beta = j.value("beta", d.beta);
  h.tau = j.value("tau", d.tau);
  h.lr = j.value("lr", d.lr);
  h.epochs = j.value("epochs", d.epochs);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.seed = j.value("seed", d.seed);
  h.strategy = strategy_from_string(j.value("strategy", std::string(to_string(d.strategy))));
  h.aug_sigma = j.value("aug_sigma", d.aug_sigma);
}

LogitMatrix TeacherSource::logits(const Matrix& batch, std::span<const std::size_t> rows) const {
  if (has_model()) return model().logits(batch);
  return gather_rows(std::get<LogitMatrix>(impl_), rows);
}

bool TrainTrace::operator==(const TrainTrace& o) const {
  if (epoch_loss != o.epoch_loss || train_accuracy != o.train_accuracy || test_accuracy != o.test_accuracy) return false;
  if (teacher_metrics.size() != o.teacher_metrics.size()) return false;
  for (std::size_t i = 0; i < teacher_metrics.size(); ++i) {
    const auto& a = teacher_metrics[i];
    const auto& b = o.teacher_metrics[i];
    if (a.kind != b.kind || a.mean != b.mean || a.n_included != b.n_included || a.n_skipped != b.n_skipped ||
        a.per_epoch_means != b.per_epoch_means)
      return false;
  }
  return true;
}

double accuracy(const Mlp& model, const Dataset& data) { return tac(predict_labels(model.forward(data.features)), data.labels); }

double accuracy(const TeacherModel& model, const Dataset& data) {
  return tac(predict_labels(model.logits(data.features)), data.labels);
}

TrainTrace train(Mlp& model, const Dataset& train_set, const Dataset& test_set, const Hyper& hyper,
                 const TeacherSource* teacher, const TrainOptions& options) {
  hyper.validate();
  if ((hyper.beta > 0.0) != (teacher != nullptr))
    throw InvalidInput("a teacher must be supplied exactly when beta > 0");
  if (train_set.size() < 1) throw EmptyInput("empty training set");
  if (train_set.features.cols() != model.input_dim()) throw InvalidInput("training features do not match model input");
  if (train_set.n_classes != model.n_classes()) throw InvalidInput("dataset class count does not match model output");
  const bool augment = hyper.strategy == Strategy::AUG_KD && teacher != nullptr;
  if (augment && !teacher->has_model()) throw InvalidInput("AUG_KD needs a live teacher model, not precomputed logits");

  const bool record = options.record_teacher_metrics && teacher != nullptr;
  std::vector<MetricAccumulator> online;
  if (record)
    for (auto kind : kAllMetrics) online.emplace_back(kind, options.ssp_k);

  Rng shuffle_rng(hyper.seed);
  Rng jitter_rng = shuffle_rng.fork(0xa06);
  const auto n = static_cast<std::size_t>(train_set.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t first_trainable = hyper.strategy == Strategy::FZ ? model.layers().size() - 1 : 0;

  TrainTrace trace;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (auto& acc : online) acc.begin_epoch();
    SeqAccumulator<double> epoch_loss;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size), n - start);
      const std::span<const std::size_t> rows(order.data() + start, count);
      const Matrix x = gather_rows(train_set.features, rows);
      std::vector<Label> y(count);
      for (std::size_t i = 0; i < count; ++i) y[i] = train_set.labels[rows[i]];

      const auto cache = model.forward_cached(x);
      LogitMatrix t_logits;
      if (teacher) t_logits = teacher->logits(x, rows);
      const auto loss = kd_loss(cache.logits, t_logits, y, hyper.beta, hyper.tau);
      double batch_loss = loss.loss;
      Gradients grads = model.backward(cache, loss.grad);

      if (augment) {
        Matrix x_aug = x;
        for (Eigen::Index r = 0; r < x_aug.rows(); ++r)
          for (Eigen::Index c = 0; c < x_aug.cols(); ++c) x_aug(r, c) += hyper.aug_sigma * jitter_rng.normal();
        const auto aug_cache = model.forward_cached(x_aug);
        const LogitMatrix t_aug = teacher->model().logits(x_aug);
        const auto kl = distill_kl(aug_cache.logits, t_aug, hyper.tau);
        batch_loss += hyper.beta * kl.loss;
        accumulate(grads, model.backward(aug_cache, kl.grad), hyper.beta);
        for (auto& acc : online) acc.add_batch(t_aug, y);
      } else {
        for (auto& acc : online) acc.add_batch(t_logits, y);
      }

      if (!std::isfinite(batch_loss) || !grads_finite(grads))
        throw Divergence("training diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                         std::to_string(start) + " (loss " + std::to_string(batch_loss) + ")");
      epoch_loss.add(batch_loss * static_cast<double>(count));

      auto layers = model.layers();
      for (std::size_t l = first_trainable; l < layers.size(); ++l) {
        layers[l].weight -= hyper.lr * grads[l].weight;
        layers[l].bias -= hyper.lr * grads[l].bias;
      }
    }
    trace.epoch_loss.push_back(epoch_loss.sum() / static_cast<double>(n));
  }

  for (const auto& acc : online) trace.teacher_metrics.push_back(acc.finish());
  trace.train_accuracy = accuracy(model, train_set);
  trace.test_accuracy = test_set.size() > 0 ? accuracy(model, test_set) : 0.0;
  return trace;
}

}  // namespace kdsel
