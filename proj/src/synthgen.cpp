// SPDX-License-Identifier: Apache-2.0
#include "kdsel/synthgen.hpp"

#include <cmath>
#include <fstream>

#include "kdsel/logit_io.hpp"

namespace kdsel {
namespace {

Vector random_unit(Rng& rng, int dim) {
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  } while (v.norm() == 0.0);
  return v / v.norm();
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_super < 1 || n_sub_per_super < 1 || n_super * n_sub_per_super < 2)
    throw InvalidInput("dataset spec needs at least 2 classes");
  if (dim < 1) throw InvalidInput("dataset spec: dim must be positive");
  if (samples_per_class < 1) throw InvalidInput("dataset spec: samples_per_class must be positive");
  if (!(coarse_spread > 0) || !(fine_offset > 0) || !(noise_sigma > 0))
    throw InvalidInput("dataset spec: spreads and noise must be positive");
  if (!(fine_offset < coarse_spread)) throw InvalidInput("dataset spec: fine_offset must be below coarse_spread");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.n_classes = n_classes;
  out.class_map = class_map;
  out.class_means = class_means;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  // Two independent unit directions are ~sqrt(2) apart in expectation for
  // moderate dim, so scaling by 1/sqrt(2) makes the knobs read as distances.
  const double coarse = spec.coarse_spread / std::sqrt(2.0);
  const double fine = spec.fine_offset / std::sqrt(2.0);

  Dataset d;
  d.n_classes = spec.n_classes();
  d.class_means.resize(d.n_classes, spec.dim);
  for (int s = 0; s < spec.n_super; ++s) {
    const Vector super_mean = coarse * random_unit(rng, spec.dim);
    for (int k = 0; k < spec.n_sub_per_super; ++k) {
      const int c = s * spec.n_sub_per_super + k;
      d.class_means.row(c) = (super_mean + fine * random_unit(rng, spec.dim)).transpose();
      d.class_map.emplace_back(s, k);
    }
  }

  const Eigen::Index n = static_cast<Eigen::Index>(d.n_classes) * spec.samples_per_class;
  d.features.resize(n, spec.dim);
  d.labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (int c = 0; c < d.n_classes; ++c) {
    for (int i = 0; i < spec.samples_per_class; ++i, ++row) {
      for (int j = 0; j < spec.dim; ++j) d.features(row, j) = d.class_means(c, j) + spec.noise_sigma * rng.normal();
      d.labels.push_back(static_cast<Label>(c));
    }
  }
  return d;
}

TrainTestSplit split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidInput("test_fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.n_classes));
  for (std::size_t i = 0; i < data.labels.size(); ++i) by_class.at(data.labels[i]).push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto rows = by_class[c];
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    if (n_test == 0 || n_test >= rows.size())
      throw InvalidInput("test_fraction leaves class " + std::to_string(c) + " empty on one side");
    rng.shuffle(rows);
    // keep original order inside each side so rows stay class-major
    std::sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::sort(rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  return {data.subset(train_rows), data.subset(test_rows)};
}

Standardizer Standardizer::fit(const Matrix& features) {
  if (features.rows() < 1) throw EmptyInput("cannot standardize an empty matrix");
  Standardizer s;
  s.mean.resize(features.cols());
  s.scale.resize(features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const Vector col = features.col(j);
    s.mean(j) = seq_mean(col);
    SeqAccumulator<double> var;
    for (Eigen::Index i = 0; i < col.size(); ++i) var.add((col(i) - s.mean(j)) * (col(i) - s.mean(j)));
    const double sd = std::sqrt(var.sum() / static_cast<double>(col.size()));
    s.scale(j) = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& features) const {
  Matrix out = features;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

void standardize(TrainTestSplit& s) {
  const auto st = Standardizer::fit(s.train.features);
  s.train.features = st.apply(s.train.features);
  s.test.features = st.apply(s.test.features);
}

TrainTestSplit make_default_split(const DatasetSpec& spec, double test_fraction) {
  auto s = split(generate(spec), test_fraction, mix_seed(spec.seed, 0x5117));
  standardize(s);
  return s;
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"n_super", s.n_super},
                     {"n_sub_per_super", s.n_sub_per_super},
                     {"dim", s.dim},
                     {"coarse_spread", s.coarse_spread},
                     {"fine_offset", s.fine_offset},
                     {"noise_sigma", s.noise_sigma},
                     {"samples_per_class", s.samples_per_class},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.n_super = j.value("n_super", d.n_super);
  s.n_sub_per_super = j.value("n_sub_per_super", d.n_sub_per_super);
  s.dim = j.value("dim", d.dim);
  s.coarse_spread = j.value("coarse_spread", d.coarse_spread);
  s.fine_offset = j.value("fine_offset", d.fine_offset);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.samples_per_class = j.value("samples_per_class", d.samples_per_class);
  s.seed = j.value("seed", d.seed);
}

void save_dataset(const std::filesystem::path& dir, const TrainTestSplit& s, const std::string& dataset_id,
                  const nlohmann::json& provenance) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, part] : {std::pair{"train", &s.train}, std::pair{"test", &s.test}}) {
    const std::string labels_name = std::string(name) + ".labels";
    io::write_labels(dir / labels_name, part->labels);
    io::Manifest m{"features", dataset_id, name, std::nullopt, labels_name, 0};
    io::write_logits(dir / (std::string(name) + ".features.lgts"), part->features, m);
  }
  nlohmann::json meta;
  meta["dataset_id"] = dataset_id;
  meta["n_classes"] = s.train.n_classes;
  meta["dim"] = s.train.features.cols();
  nlohmann::json cmap = nlohmann::json::array();
  for (auto [sup, sub] : s.train.class_map) cmap.push_back({sup, sub});
  meta["class_map"] = cmap;
  if (!provenance.is_null()) meta["provenance"] = provenance;
  std::ofstream out(dir / "dataset.json");
  if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
  out << meta.dump(2) << "\n";
}

TrainTestSplit load_dataset(const std::filesystem::path& dir, std::string* dataset_id) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw IoError("cannot open " + (dir / "dataset.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset.json: ") + e.what());
  }
  TrainTestSplit s;
  for (auto [name, part] : {std::pair{"train", &s.train}, std::pair{"test", &s.test}}) {
    auto loaded = io::read_logits(dir / (std::string(name) + ".features.lgts"));
    part->features = std::move(loaded.logits);
    part->labels = io::read_labels(io::labels_path_for(dir / "x", loaded.manifest));
    if (part->labels.size() != static_cast<std::size_t>(part->features.rows()))
      throw ShapeMismatch(std::string(name) + ": labels and features disagree in length");
    part->n_classes = meta.at("n_classes").get<int>();
    for (const auto& pair : meta.at("class_map")) part->class_map.emplace_back(pair[0].get<int>(), pair[1].get<int>());
    for (auto l : part->labels)
      if (l >= static_cast<Label>(part->n_classes)) throw ShapeMismatch("label out of range in " + std::string(name));
  }
  if (dataset_id) *dataset_id = meta.value("dataset_id", dir.filename().string());
  return s;
}

}  // namespace kdsel
