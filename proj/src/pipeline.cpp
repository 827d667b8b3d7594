// SPDX-License-Identifier: Apache-2.0
#include "kdsel/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "kdsel/logit_io.hpp"
#include "kdsel/version.hpp"

namespace kdsel {
namespace {

// Keeps the error family (and hence the CLI exit code) while adding context.
[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(context + ": " + e.what());
  } catch (const Error& e) {
    throw Error(context + ": " + e.what());
  }
}

std::size_t metric_index(MetricKind k) {
  switch (k) {
    case MetricKind::TAC: return 0;
    case MetricKind::SSP: return 1;
    case MetricKind::R12: return 2;
  }
  return 0;
}

std::vector<int> layer_sizes(int input, const std::vector<int>& hidden, int classes) {
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(classes);
  return sizes;
}

}  // namespace

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < n && !failed; i = next++) {
            try {
              fn(i);
            } catch (...) {
              errors[i] = std::current_exception();
              failed = true;
            }
          }
        });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

const MetricSummary& TeacherResult::summary(MetricKind k) const { return summaries.at(metric_index(k)); }

const TeacherResult& ExperimentReport::teacher(const std::string& id) const {
  for (const auto& t : teachers)
    if (t.id == id) return t;
  throw InvalidInput("report has no teacher '" + id + "'");
}

const MetricResult& ExperimentReport::metric(MetricKind k) const {
  for (const auto& m : metrics)
    if (m.kind == k) return m;
  throw InvalidInput("report has no metric " + std::string(to_string(k)));
}

TrainTestSplit load_experiment_data(const ExperimentConfig& config, std::string* dataset_id) {
  if (config.dataset_path.empty()) {
    if (dataset_id) *dataset_id = config.name;
    return make_default_split(config.dataset, config.test_fraction);
  }
  return load_dataset(config.dataset_path, dataset_id);
}

Mlp train_teacher(const TeacherRecipe& r, const TrainTestSplit& data) {
  if (r.kind != TeacherRecipe::Kind::Trained) throw InvalidArgument("teacher '" + r.id + "' is not a trained teacher");
  Mlp m(layer_sizes(static_cast<int>(data.train.features.cols()), r.hidden, data.train.n_classes), r.activation,
        r.effective_seed());
  Hyper h;
  h.beta = 0.0;
  h.epochs = r.epochs;
  h.lr = r.lr;
  h.batch_size = r.batch_size;
  // teachers learn from labels alone, so the augmentation term has nothing to add
  h.strategy = r.strategy == Strategy::AUG_KD ? Strategy::FT : r.strategy;
  h.seed = mix_seed(r.effective_seed(), 1);
  train(m, data.train, data.test, h);
  return m;
}

std::vector<PreparedTeacher> prepare_teachers(const ExperimentConfig& config, const TrainTestSplit& data, int jobs,
                                              std::span<const std::string> only) {
  std::vector<const TeacherRecipe*> wanted;
  for (const auto& t : config.teachers)
    if (only.empty() || std::find(only.begin(), only.end(), t.id) != only.end()) wanted.push_back(&t);
  for (const auto& id : only)
    if (!config.find_teacher(id)) throw InvalidArgument("no teacher '" + id + "' in the config");

  // live bases needed by the wanted teachers, each trained once
  std::vector<const TeacherRecipe*> bases;
  auto need = [&](const TeacherRecipe* r) {
    if (std::find(bases.begin(), bases.end(), r) == bases.end()) bases.push_back(r);
  };
  for (const auto* r : wanted) {
    if (r->kind == TeacherRecipe::Kind::Trained) need(r);
    if (r->kind == TeacherRecipe::Kind::Overconfident) need(config.find_teacher(r->base));
  }
  std::vector<std::optional<Mlp>> trained(bases.size());
  parallel_for(bases.size(), jobs, [&](std::size_t k) {
    try {
      trained[k] = train_teacher(*bases[k], data);
    } catch (...) {
      rethrow_with_context("teacher '" + bases[k]->id + "'");
    }
  });
  auto base_model = [&](const std::string& id) -> const Mlp& {
    for (std::size_t k = 0; k < bases.size(); ++k)
      if (bases[k]->id == id) return *trained[k];
    throw InvalidArgument("teacher '" + id + "' was not trained");
  };

  const Eigen::Index n_classes = data.train.n_classes;
  std::vector<PreparedTeacher> pool;
  for (const auto* r : wanted) {
    PreparedTeacher p;
    p.recipe = r;
    try {
      if (r->kind == TeacherRecipe::Kind::Trained) p.model = TeacherModel(base_model(r->id));
      if (r->kind == TeacherRecipe::Kind::Overconfident) p.model = make_overconfident(base_model(r->base), r->margin);
      if (p.model) {
        p.train_logits = p.model->logits(data.train.features);
        p.test_logits = p.model->logits(data.test.features);
      } else {
        auto loaded = io::read_logits(r->logits);
        if (loaded.logits.rows() != data.train.size() || loaded.logits.cols() != n_classes)
          throw ShapeMismatch("exported logits are " + std::to_string(loaded.logits.rows()) + "x" +
                              std::to_string(loaded.logits.cols()) + ", training split is " +
                              std::to_string(data.train.size()) + "x" + std::to_string(n_classes));
        p.train_logits = std::move(loaded.logits);
        if (!r->test_logits.empty()) {
          auto test = io::read_logits(r->test_logits);
          if (test.logits.rows() != data.test.size() || test.logits.cols() != n_classes)
            throw ShapeMismatch("exported test logits do not match the test split");
          p.test_logits = std::move(test.logits);
        }
      }
    } catch (...) {
      rethrow_with_context("teacher '" + r->id + "'");
    }
    pool.push_back(std::move(p));
  }
  return pool;
}

ExperimentReport run_pipeline(const ExperimentConfig& config, const PipelineOptions& options) {
  config.validate();

  std::string dataset_id;
  const TrainTestSplit data = load_experiment_data(config, &dataset_id);
  const int n_classes = data.train.n_classes;
  const int dim = static_cast<int>(data.train.features.cols());
  const std::vector<PreparedTeacher> pool = prepare_teachers(config, data, options.jobs);

  ExperimentReport report;
  report.name = config.name;
  report.dataset_id = dataset_id;
  report.student = config.student.describe();
  report.strategy = std::string(display_name(config.hyper.strategy));
  report.mode = std::string(to_string(config.effective_mode()));
  report.seeds = config.seeds;

  // Static metrics (TAC is always a single clean pass)
  const auto batch = static_cast<Eigen::Index>(config.hyper.batch_size);
  std::vector<TeacherResult> results(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& p = pool[i];
    auto& res = results[i];
    res.id = p.recipe->id;
    res.kind = std::string(to_string(p.recipe->kind));
    try {
      if (p.test_logits.size() > 0) {
        res.summaries.push_back(aggregate_static(MetricKind::TAC, p.test_logits, data.test.labels, batch));
      } else {
        res.summaries.push_back(aggregate_static(MetricKind::TAC, p.train_logits, data.train.labels, batch));
        report.warnings.push_back("teacher '" + res.id + "': no test logits, TAC measured on the training split");
      }
      res.summaries.push_back(aggregate_static(MetricKind::SSP, p.train_logits, {}, batch, config.ssp_k));
      res.summaries.push_back(aggregate_static(MetricKind::R12, p.train_logits, {}, batch));
      const auto k = std::min<Eigen::Index>(config.topk, n_classes);
      const auto top = summarize_topk(p.train_logits.row(0), k);
      res.topk_values.assign(top.values.data(), top.values.data() + k);
      for (auto idx : top.indices) res.topk_indices.push_back(static_cast<std::int64_t>(idx));
      std::vector<SeqAccumulator<double>> cols(static_cast<std::size_t>(k));
      for (Eigen::Index r = 0; r < p.train_logits.rows(); ++r) {
        const auto sorted = sort_desc_topk(p.train_logits.row(r), k).values;
        for (Eigen::Index c = 0; c < k; ++c) cols[static_cast<std::size_t>(c)].add(sorted(c));
      }
      for (const auto& c : cols) res.mean_topk.push_back(c.mean());
    } catch (...) {
      rethrow_with_context("teacher '" + res.id + "' metrics");
    }
  }

  // one student per (teacher, seed), plus the CE baseline
  struct Cell {
    std::optional<std::size_t> teacher;
    std::size_t seed_index;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < pool.size(); ++t)
    for (std::size_t s = 0; s < config.seeds.size(); ++s) cells.push_back({t, s});
  if (config.ce_baseline)
    for (std::size_t s = 0; s < config.seeds.size(); ++s) cells.push_back({std::nullopt, s});

  const bool online = config.effective_mode() == MetricMode::Online;
  std::vector<TrainTrace> traces(cells.size());
  const auto student_sizes = layer_sizes(dim, config.student.hidden, n_classes);
  parallel_for(cells.size(), options.jobs, [&](std::size_t c) {
    const auto& cell = cells[c];
    const auto seed = config.seeds[cell.seed_index];
    const std::string who = cell.teacher ? "teacher '" + pool[*cell.teacher].recipe->id + "'" : "CE baseline";
    try {
      Mlp student(student_sizes, config.student.activation, mix_seed(seed, 0x57d));
      Hyper h = config.hyper;
      h.seed = seed;
      TrainOptions opt;
      opt.ssp_k = config.ssp_k;
      if (!cell.teacher) {
        h.beta = 0.0;
        traces[c] = train(student, data.train, data.test, h, nullptr, opt);
        return;
      }
      const auto& p = pool[*cell.teacher];
      const TeacherSource src = p.model ? TeacherSource(*p.model) : TeacherSource(p.train_logits);
      opt.record_teacher_metrics = online;
      traces[c] = train(student, data.train, data.test, h, h.beta > 0.0 ? &src : nullptr, opt);
    } catch (...) {
      rethrow_with_context(who + ", seed " + std::to_string(seed));
    }
  });

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const SeedAccuracy acc{config.seeds[cells[c].seed_index], traces[c].test_accuracy};
    if (cells[c].teacher)
      results[*cells[c].teacher].accuracies.push_back(acc);
    else
      report.ce_baseline.push_back(acc);
  }
  if (!report.ce_baseline.empty()) {
    std::vector<double> v;
    for (const auto& a : report.ce_baseline) v.push_back(a.accuracy);
    report.ce_mean = seq_mean(v);
  }

  for (std::size_t t = 0; t < results.size(); ++t) {
    auto& res = results[t];
    std::vector<double> v;
    for (const auto& a : res.accuracies) v.push_back(a.accuracy);
    res.mean_accuracy = seq_mean(v);
    if (online && config.hyper.beta > 0.0) {
      for (MetricKind k : {MetricKind::SSP, MetricKind::R12}) {
        std::vector<MetricSummary> parts;
        for (std::size_t c = 0; c < cells.size(); ++c)
          if (cells[c].teacher == t) parts.push_back(traces[c].teacher_metrics.at(metric_index(k)));
        try {
          res.summaries[metric_index(k)] = merge_summaries(parts);
        } catch (...) {
          rethrow_with_context("teacher '" + res.id + "' online metrics");
        }
      }
    }
    const auto& r12 = res.summary(MetricKind::R12);
    if (r12.skip_warning()) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "teacher '%s': R12 skipped %llu of %llu samples (P2 <= 0)", res.id.c_str(),
                    static_cast<unsigned long long>(r12.n_skipped), static_cast<unsigned long long>(r12.total()));
      report.warnings.emplace_back(buf);
    }
  }
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.teachers = std::move(results);

  // per-metric ranking, selection and correlation
  for (MetricKind kind : kAllMetrics) {
    MetricResult m;
    m.kind = kind;
    std::map<std::string, MetricSummary> summaries;
    Vector values(static_cast<Eigen::Index>(report.teachers.size()));
    Vector accs(values.size());
    for (std::size_t t = 0; t < report.teachers.size(); ++t) {
      summaries[report.teachers[t].id] = report.teachers[t].summary(kind);
      values(static_cast<Eigen::Index>(t)) = report.teachers[t].summary(kind).mean;
      accs(static_cast<Eigen::Index>(t)) = report.teachers[t].mean_accuracy;
    }
    if (summaries.size() >= 2) {
      m.ranking = rank_teachers(summaries, kind);
    } else {
      m.ranking = {kind, {report.teachers.front().id}, report.teachers.front().id};
    }
    m.selected_accuracy = report.teacher(m.ranking.selected).mean_accuracy;
    if (values.size() < 3) {
      m.correlation_note = "fewer than 3 teachers";
    } else {
      try {
        m.correlation = correlation_entry(kind, values, accs);
      } catch (const UndefinedCorrelation&) {
        m.correlation_note = "undefined: constant metric or accuracy across teachers";
      }
    }
    report.metrics.push_back(std::move(m));
  }

  report.provenance.config_hash = io::checksum_hex(config_hash(config));
  report.provenance.toolkit_version = kVersion;
  report.provenance.timestamp = options.timestamp;
  return report;
}

AggregateTables correlate_experiments(std::span<const ExperimentReport> reports) {
  if (reports.empty()) throw EmptyInput("no reports to correlate");
  AggregateTables out;
  std::map<MetricKind, std::array<std::size_t, 3>> counts;
  std::map<MetricKind, SeqAccumulator<double>> overall;
  std::map<std::string, std::map<MetricKind, SeqAccumulator<double>>> by_dataset;
  for (const auto& r : reports) {
    SelectionRow row{r.name, r.dataset_id, r.ce_mean, {}, {}};
    for (const auto& m : r.metrics) {
      row.selected_accuracy[m.kind] = m.selected_accuracy;
      row.selected_teacher[m.kind] = m.ranking.selected;
      if (!m.correlation) continue;
      ++counts[m.kind][static_cast<std::size_t>(m.correlation->bucket)];
      overall[m.kind].add(m.correlation->abs_rho);
      by_dataset[r.dataset_id][m.kind].add(m.correlation->abs_rho);
    }
    out.selection.push_back(std::move(row));
  }
  if (overall.empty()) throw EmptyInput("none of the reports carries a correlation entry");
  for (const auto& [kind, c] : counts) {
    const std::size_t n = c[0] + c[1] + c[2];
    out.buckets[kind] = {100.0 * static_cast<double>(c[0]) / static_cast<double>(n),
                         100.0 * static_cast<double>(c[1]) / static_cast<double>(n),
                         100.0 * static_cast<double>(c[2]) / static_cast<double>(n), n};
  }
  for (const auto& [kind, acc] : overall) out.mean_abs_rho_overall[kind] = acc.mean();
  for (const auto& [ds, per] : by_dataset)
    for (const auto& [kind, acc] : per) out.mean_abs_rho_by_dataset[ds][kind] = acc.mean();
  return out;
}

}  // namespace kdsel
