// SPDX-License-Identifier: Apache-2.0
//
// kdsel command-line front end. Exit codes: 0 success, 2 bad config or
// input, 3 numeric failure, 4 file or format failure, 1 anything else.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "kdsel/checkpoint.hpp"
#include "kdsel/error.hpp"
#include "kdsel/logit_io.hpp"
#include "kdsel/pipeline.hpp"
#include "kdsel/report.hpp"
#include "kdsel/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kdsel;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  io::write_file_bytes(path, std::span<const std::byte>(p, text.size()));
}

// JSON goes to stdout unless an output directory is given.
void emit_json(const json& j, const std::string& out_dir, const std::string& file_name) {
  if (out_dir.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / file_name, j.dump(2) + "\n");
  std::cerr << "wrote " << (fs::path(out_dir) / file_name).string() << '\n';
}

json summary_json(const MetricSummary& s) {
  return {{"metric", to_string(s.kind)},
          {"mean", s.mean},
          {"n_included", s.n_included},
          {"n_skipped", s.n_skipped},
          {"skip_warning", s.skip_warning()}};
}

struct LogitInput {
  io::LoadedLogits data;
  std::vector<Label> labels;  // empty when the manifest's labels file is missing
};

LogitInput load_input(const fs::path& path) {
  LogitInput in{io::read_logits(path), {}};
  const auto labels = io::labels_path_for(path, in.data.manifest);
  if (!in.data.manifest.labels_path.empty() && fs::exists(labels)) in.labels = io::read_labels(labels);
  return in;
}

// Static: one clean pass per file. Online: the files are successive epochs
// of one teacher, ordered by the manifest epoch.
std::map<std::string, std::vector<MetricSummary>> compute_metrics(const std::vector<std::string>& files,
                                                                  MetricMode mode, Eigen::Index batch, int ssp_k) {
  std::map<std::string, std::vector<MetricSummary>> out;
  std::vector<LogitInput> inputs;
  for (const auto& f : files) inputs.push_back(load_input(f));
  if (mode == MetricMode::Static) {
    for (const auto& in : inputs) {
      const auto& id = in.data.manifest.teacher_id;
      if (out.count(id)) throw InvalidArgument("teacher '" + id + "' given twice; use --mode online for epochs");
      auto& v = out[id];
      if (!in.labels.empty()) v.push_back(aggregate_static(MetricKind::TAC, in.data.logits, in.labels, batch));
      v.push_back(aggregate_static(MetricKind::SSP, in.data.logits, {}, batch, ssp_k));
      v.push_back(aggregate_static(MetricKind::R12, in.data.logits, {}, batch));
    }
    return out;
  }
  std::map<std::string, std::vector<const LogitInput*>> by_teacher;
  for (const auto& in : inputs) by_teacher[in.data.manifest.teacher_id].push_back(&in);
  for (auto& [id, list] : by_teacher) {
    std::stable_sort(list.begin(), list.end(), [](const LogitInput* a, const LogitInput* b) {
      return a->data.manifest.epoch.value_or(0) < b->data.manifest.epoch.value_or(0);
    });
    for (MetricKind kind : kAllMetrics) {
      if (kind == MetricKind::TAC && list.front()->labels.empty()) continue;
      MetricAccumulator acc(kind, ssp_k);
      for (const auto* in : list) {
        acc.begin_epoch();
        const auto& l = in->data.logits;
        for (Eigen::Index r = 0; r < l.rows(); r += batch) {
          const auto n = std::min(batch, l.rows() - r);
          std::span<const Label> lab;
          if (kind == MetricKind::TAC) lab = std::span<const Label>(in->labels).subspan(static_cast<std::size_t>(r),
                                                                                       static_cast<std::size_t>(n));
          acc.add_batch(l.middleRows(r, n), lab);
        }
      }
      out[id].push_back(acc.finish());
    }
  }
  return out;
}

void save_split_logits(const fs::path& dir, const std::string& id, const std::string& dataset_id,
                       const std::string& split, const LogitMatrix& logits, const std::vector<Label>& labels) {
  const auto labels_name = id + "." + split + ".labels";
  io::write_labels(dir / labels_name, labels);
  io::Manifest m{id, dataset_id, split, std::nullopt, labels_name, 0};
  io::write_logits(dir / (id + "." + split + ".lgts"), logits, m);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdsel: rank teachers for knowledge distillation by the information in their logits"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path, out_dir, format, mode_name;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;

  auto add_config = [&](CLI::App* c, bool required) {
    auto* o = c->add_option("--config", config_path, "experiment config (JSON)");
    if (required) o->required();
    else o->check(CLI::ExistingFile);
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic fine-grained dataset of a config");
  add_config(gen, false);
  gen->add_option("--seed", seeds, "dataset seed (overrides the config)")->expected(0, 1);
  gen->add_option("--out-dir", out_dir, "dataset directory")->required();

  std::string teacher_id;
  auto* tt = app.add_subcommand("train-teacher", "train one teacher of a config and export its logits");
  add_config(tt, true);
  tt->add_option("--teacher", teacher_id, "teacher id from the config")->required();
  tt->add_option("--out-dir", out_dir, "output directory")->required();

  std::vector<std::string> logit_files;
  int batch = 32, ssp_k = 3;
  auto* met = app.add_subcommand("metrics", "TAC, SSP and R12 of exported logits");
  met->add_option("--logits", logit_files, "LGTS files (repeatable)")->required()->check(CLI::ExistingFile);
  met->add_option("--mode", mode_name, "static | online")->check(CLI::IsMember({"static", "online"}));
  met->add_option("--batch", batch, "batch size for averaging")->check(CLI::PositiveNumber);
  met->add_option("--ssp-k", ssp_k, "number of secondary classes for SSP");
  met->add_option("--out-dir", out_dir, "write metrics.json here instead of stdout");

  std::string teacher_ckpt;
  auto* dis = app.add_subcommand("distill", "train one student from one teacher");
  add_config(dis, true);
  dis->add_option("--teacher", teacher_id, "teacher id; omit for the cross-entropy baseline");
  dis->add_option("--teacher-checkpoint", teacher_ckpt, "use a saved teacher instead")->check(CLI::ExistingFile);
  dis->add_option("--seed", seeds, "student seed")->expected(0, 1);
  dis->add_option("--out-dir", out_dir, "write the student checkpoint and result here");

  std::string metric_name = "R12";
  auto* rnk = app.add_subcommand("rank", "rank teachers by a metric of their exported logits");
  rnk->add_option("--logits", logit_files, "LGTS files, one per teacher")->required()->check(CLI::ExistingFile);
  rnk->add_option("--metric", metric_name, "TAC | SSP | R12")->check(CLI::IsMember({"TAC", "SSP", "R12"}));
  rnk->add_option("--batch", batch, "batch size for averaging")->check(CLI::PositiveNumber);
  rnk->add_option("--ssp-k", ssp_k, "number of secondary classes for SSP");
  rnk->add_option("--out-dir", out_dir, "write ranking.json here instead of stdout");

  std::vector<std::string> report_files;
  auto* cor = app.add_subcommand("correlate", "aggregate correlation tables over report.json files");
  cor->add_option("--report", report_files, "report.json files")->required()->check(CLI::ExistingFile);
  cor->add_option("--format", format, "json | markdown")->check(CLI::IsMember({"json", "markdown"}));
  cor->add_option("--out-dir", out_dir, "write tables.{json,md} here instead of stdout");

  auto* rep = app.add_subcommand("report", "re-render a report.json");
  rep->add_option("--report", report_files, "report.json")->required()->expected(1)->check(CLI::ExistingFile);
  rep->add_option("--format", format, "comma list of markdown, csv, json, or all");
  rep->add_option("--out-dir", out_dir, "output directory")->required();

  auto* pipe = app.add_subcommand("pipeline", "run the whole study and write the report");
  add_config(pipe, false);
  pipe->add_option("--seed", seeds, "student seeds (override the config)");
  pipe->add_option("--mode", mode_name, "static | online")->check(CLI::IsMember({"static", "online"}));
  pipe->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  pipe->add_option("--format", format, "comma list of markdown, csv, json, or all");
  pipe->add_option("--out-dir", out_dir, "output directory")->required();

  auto* val = app.add_subcommand("validate", "check an LGTS file against its manifest and labels");
  val->add_option("--logits", logit_files, "LGTS files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  auto load = [&] { return config_path.empty() ? default_config() : load_config(config_path); };

  try {
    if (*gen) {
      auto cfg = load();
      if (!seeds.empty()) cfg.dataset.seed = seeds.front();
      if (!cfg.dataset_path.empty()) throw ConfigError("config points at an existing dataset; nothing to generate");
      const auto data = make_default_split(cfg.dataset, cfg.test_fraction);
      save_dataset(out_dir, data, cfg.name, json{{"spec", cfg.dataset}, {"test_fraction", cfg.test_fraction}});
      std::cerr << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to "
                << out_dir << '\n';
    } else if (*tt) {
      const auto cfg = load_config(config_path);
      std::string dataset_id;
      const auto data = load_experiment_data(cfg, &dataset_id);
      const std::string only[] = {teacher_id};
      const auto prepared = prepare_teachers(cfg, data, 1, only);
      const auto& p = prepared.front();
      fs::create_directories(out_dir);
      if (p.model) {
        json lineage{{"teacher_id", teacher_id}, {"dataset_id", dataset_id},
                     {"seed", p.recipe->kind == TeacherRecipe::Kind::Trained
                                  ? p.recipe->effective_seed()
                                  : cfg.find_teacher(p.recipe->base)->effective_seed()}};
        save_checkpoint(fs::path(out_dir) / (teacher_id + ".ckpt"),
                        Checkpoint{p.model->base(), p.model->margin(), std::move(lineage)});
      }
      save_split_logits(out_dir, teacher_id, dataset_id, "train", p.train_logits, data.train.labels);
      if (p.test_logits.size() > 0)
        save_split_logits(out_dir, teacher_id, dataset_id, "test", p.test_logits, data.test.labels);
      std::cerr << "teacher " << teacher_id << " written to " << out_dir << '\n';
    } else if (*met) {
      const auto mode = mode_name.empty() ? MetricMode::Static : metric_mode_from_string(mode_name);
      const auto result = compute_metrics(logit_files, mode, batch, ssp_k);
      json j = json::object();
      for (const auto& [id, list] : result) {
        json arr = json::array();
        for (const auto& s : list) arr.push_back(summary_json(s));
        j[id] = std::move(arr);
      }
      emit_json(json{{"mode", to_string(mode)}, {"teachers", std::move(j)}}, out_dir, "metrics.json");
    } else if (*dis) {
      const auto cfg = load_config(config_path);
      const auto data = load_experiment_data(cfg);
      const std::uint64_t seed = seeds.empty() ? cfg.seeds.front() : seeds.front();
      std::optional<TeacherSource> source;
      std::string label = "ce-only";
      if (!teacher_ckpt.empty()) {
        const auto ck = load_checkpoint(teacher_ckpt);
        source.emplace(TeacherModel(ck.model, ck.margin));
        label = teacher_ckpt;
      } else if (!teacher_id.empty()) {
        const std::string only[] = {teacher_id};
        auto prepared = prepare_teachers(cfg, data, 1, only);
        auto& p = prepared.front();
        if (p.model) source.emplace(*p.model);
        else source.emplace(std::move(p.train_logits));
        label = teacher_id;
      }
      Hyper h = cfg.hyper;
      h.seed = seed;
      if (!source) h.beta = 0.0;
      std::vector<int> sizes{static_cast<int>(data.train.features.cols())};
      sizes.insert(sizes.end(), cfg.student.hidden.begin(), cfg.student.hidden.end());
      sizes.push_back(data.train.n_classes);
      Mlp student(sizes, cfg.student.activation, mix_seed(seed, 0x57d));
      TrainOptions opt;
      opt.ssp_k = cfg.ssp_k;
      const auto trace = train(student, data.train, data.test, h, source ? &*source : nullptr, opt);
      json j{{"teacher", label},
             {"seed", seed},
             {"student", cfg.student.describe()},
             {"strategy", display_name(h.strategy)},
             {"train_accuracy", trace.train_accuracy},
             {"test_accuracy", trace.test_accuracy},
             {"final_loss", trace.epoch_loss.back()}};
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        save_checkpoint(fs::path(out_dir) / "student.ckpt",
                        Checkpoint{student, 0.0, json{{"teacher", label}, {"seed", seed}}});
      }
      emit_json(j, out_dir, "distill.json");
    } else if (*rnk) {
      const auto kind = metric_kind_from_string(metric_name);
      const auto result = compute_metrics(logit_files, MetricMode::Static, batch, ssp_k);
      std::map<std::string, MetricSummary> pick;
      for (const auto& [id, list] : result)
        for (const auto& s : list)
          if (s.kind == kind) pick[id] = s;
      if (pick.size() != result.size()) throw InvalidInput("TAC needs a labels file for every teacher");
      const auto ranking = rank_teachers(pick, kind);
      json values = json::object();
      for (const auto& [id, s] : pick) values[id] = s.mean;
      emit_json(json{{"metric", to_string(kind)},
                     {"order", ranking.order},
                     {"selected", ranking.selected},
                     {"lower_is_better", lower_is_better(kind)},
                     {"values", std::move(values)}},
                out_dir, "ranking.json");
    } else if (*cor) {
      std::vector<ExperimentReport> reports;
      for (const auto& f : report_files) {
        const auto bytes = io::read_file_bytes(f);
        json j;
        try {
          j = json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        } catch (const json::exception& e) {
          throw FormatError(f + ": " + e.what());
        }
        reports.push_back(report_from_json(j));
      }
      const auto tables = correlate_experiments(reports);
      if (format == "markdown") {
        if (out_dir.empty()) std::cout << render_tables_markdown(tables);
        else {
          fs::create_directories(out_dir);
          write_text(fs::path(out_dir) / "tables.md", render_tables_markdown(tables));
        }
      } else {
        emit_json(tables_to_json(tables), out_dir, "tables.json");
      }
    } else if (*rep) {
      const auto bytes = io::read_file_bytes(report_files.front());
      json j;
      try {
        j = json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      } catch (const json::exception& e) {
        throw FormatError(report_files.front() + ": " + e.what());
      }
      const auto formats = parse_formats(format.empty() ? "all" : format);
      for (const auto& p : emit_report(report_from_json(j), formats, out_dir)) std::cerr << "wrote " << p.string() << '\n';
    } else if (*pipe) {
      auto cfg = load();
      if (!seeds.empty()) cfg.seeds = seeds;
      if (!mode_name.empty()) cfg.mode = metric_mode_from_string(mode_name);
      const auto formats = parse_formats(format.empty() ? "all" : format);
      PipelineOptions opt;
      opt.jobs = jobs;
      opt.timestamp = utc_timestamp();
      const auto report = run_pipeline(cfg, opt);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& p : emit_report(report, formats, out_dir)) std::cerr << "wrote " << p.string() << '\n';
    } else if (*val) {
      bool ok = true;
      for (const auto& f : logit_files) {
        const auto r = io::validate(fs::path(f));
        for (const auto& finding : r.findings) std::cout << f << ": " << finding.check << ": " << finding.message << '\n';
        if (r.ok()) std::cout << f << ": ok\n";
        ok = ok && r.ok();
      }
      return ok ? kOk : kIo;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
