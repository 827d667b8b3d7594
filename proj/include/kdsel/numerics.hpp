// SPDX-License-Identifier: Apache-2.0
//
// Low-level numeric kernels: stable softmax, descending top-k with index
// tie-break, compensated sequential reductions and a seeded random stream.
// Everything here is a pure function of its arguments except Rng.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "kdsel/error.hpp"

namespace kdsel {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
/// Raw per-sample class scores; rows are samples, columns are classes.
using LogitMatrix = Matrix;
using Label = std::uint32_t;

/// Copies any vector-shaped expression (row or column) into a column vector.
template <typename Derived>
VectorX<typename Derived::Scalar> to_vector(const Eigen::DenseBase<Derived>& v) {
  VectorX<typename Derived::Scalar> out(v.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index c = 0; c < v.cols(); ++c) out(k++) = v.derived().coeff(r, c);
  return out;
}

/// Neumaier-compensated running sum, fed strictly in call order.
template <typename Scalar = double>
class SeqAccumulator {
 public:
  void add(Scalar x) {
    const Scalar t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
    ++count_;
  }

  Scalar sum() const { return sum_ + comp_; }
  std::uint64_t count() const { return count_; }
  bool empty() const { return count_ == 0; }

  Scalar mean() const {
    if (count_ == 0) throw EmptyInput("mean of an empty sequence");
    return sum() / static_cast<Scalar>(count_);
  }

 private:
  Scalar sum_{0};
  Scalar comp_{0};
  std::uint64_t count_{0};
};

/// Arithmetic mean in sequence order with compensated summation.
template <typename Range>
auto seq_mean(const Range& values) {
  using Scalar = std::remove_cvref_t<decltype(*std::begin(values))>;
  SeqAccumulator<Scalar> acc;
  for (const auto& v : values) acc.add(v);
  return acc.mean();
}

/// Softmax via max-subtraction; throws InvalidInput on non-finite or short input.
template <typename Derived>
VectorX<typename Derived::Scalar> stable_softmax(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() < 2) throw InvalidInput("softmax needs at least 2 entries");
  if (!v.derived().allFinite()) throw InvalidInput("softmax input is not finite");
  VectorX<Scalar> out = to_vector(v);
  const Scalar top = out.maxCoeff();
  SeqAccumulator<Scalar> total;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out(i) = std::exp(out(i) - top);
    total.add(out(i));
  }
  out /= total.sum();
  return out;
}

/// log(softmax(v)), stable for large magnitudes.
template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> out = to_vector(v);
  const Scalar top = out.maxCoeff();
  SeqAccumulator<Scalar> total;
  for (Eigen::Index i = 0; i < out.size(); ++i) total.add(std::exp(out(i) - top));
  out.array() -= top + std::log(total.sum());
  return out;
}

template <typename Scalar>
struct TopK {
  VectorX<Scalar> values;
  std::vector<Eigen::Index> indices;
};

/// The k largest entries in descending order. Equal values keep the lower
/// original index first, which makes top-2 selection deterministic.
template <typename Derived>
TopK<typename Derived::Scalar> sort_desc_topk(const Eigen::DenseBase<Derived>& v, Eigen::Index k) {
  if (k < 1 || k > v.size()) throw InvalidArgument("top-k: k out of range");
  const auto x = to_vector(v);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return x(a) > x(b) || (x(a) == x(b) && a < b);
  });
  order.resize(static_cast<std::size_t>(k));
  TopK<typename Derived::Scalar> out{VectorX<typename Derived::Scalar>(k), std::move(order)};
  for (Eigen::Index i = 0; i < k; ++i) out.values(i) = x(out.indices[static_cast<std::size_t>(i)]);
  return out;
}

/// Index of the first maximal entry.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v.derived().coeff(i) > v.derived().coeff(best)) best = i;
  return best;
}

/// Seeded random stream. The engine (mt19937_64) is fully specified by the
/// standard; all derived variates are computed here rather than through
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do r = engine_();
    while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller (cached pair).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform();
    while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  /// Independent child stream, e.g. one per teacher or per seed.
  Rng fork(std::uint64_t salt) {
    // splitmix64 finalizer over (next draw ^ salt)
    std::uint64_t z = engine_() ^ (salt + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double spare_{0.0};
  bool has_spare_{false};
};

/// Deterministic seed derivation independent of any stream state.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace kdsel
