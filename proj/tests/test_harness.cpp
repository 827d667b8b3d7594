// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "kdsel/logit_io.hpp"
#include "kdsel/pipeline.hpp"
#include "kdsel/report.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace kdsel;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const char* env = std::getenv("KDSEL_TMP");
  fs::path dir = env ? fs::path(env) : fs::temp_directory_path() / "kdsel_tests";
  dir /= name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TeacherRecipe live(std::string id, int width, int epochs = 8) {
  TeacherRecipe t;
  t.id = std::move(id);
  t.hidden = {width};
  t.epochs = epochs;
  return t;
}

TeacherRecipe wrap(std::string id, std::string base, double margin) {
  TeacherRecipe t;
  t.id = std::move(id);
  t.kind = TeacherRecipe::Kind::Overconfident;
  t.base = std::move(base);
  t.margin = margin;
  return t;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.name = "tiny";
  c.dataset.n_super = 2;
  c.dataset.n_sub_per_super = 3;
  c.dataset.dim = 6;
  c.dataset.samples_per_class = 20;
  c.teachers = {live("a", 16), live("b", 4), wrap("a-m2", "a", 2.0)};
  c.hyper.epochs = 5;
  c.hyper.batch_size = 16;
  c.seeds = {3, 1, 2};
  return c;
}

MetricResult fake_metric(MetricKind k, double rho) {
  MetricResult m;
  m.kind = k;
  m.ranking = {k, {"x", "y", "z"}, "x"};
  m.selected_accuracy = 0.5;
  m.correlation = CorrelationEntry{k, rho, std::abs(rho), classify_correlation(rho), 5};
  return m;
}

ExperimentReport fake_report(std::string dataset, std::vector<MetricResult> metrics) {
  ExperimentReport r;
  r.name = "fake-" + dataset;
  r.dataset_id = std::move(dataset);
  r.metrics = std::move(metrics);
  return r;
}

}  // namespace

TEST_CASE("config: JSON round trip preserves the config and its hash") {
  const auto c = tiny_config();
  const auto back = config_from_json(json::parse(config_to_json(c).dump()));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  auto other = c;
  other.seeds.push_back(9);
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("config: malformed or inconsistent configs are rejected as config errors") {
  const auto base = config_to_json(tiny_config());
  auto bad = [&](auto edit) {
    json j = base;
    edit(j);
    return [j] { config_from_json(j).validate(); };
  };
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"] = json::array(); })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["seeds"] = {1, 1}; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["seeds"] = json::array(); })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"][2]["base"] = "nobody"; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"][2]["base"] = "a-m2"; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"][1]["id"] = "a"; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"][0]["epoch"] = 3; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["hyper"]["strategy"] = "XX"; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["hyper"]["tau"] = 0.0; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["mode"] = "sometimes"; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["dataset"]["n_super"] = 0; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["dataset"]["test_fraction"] = 1.0; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["student"]["hidden"] = {0}; })(), ConfigError);
  CHECK_THROWS_AS(bad([](json& j) { j["teachers"][0] = {{"id", "ext"}, {"logits", "/does/not/exist.lgts"}}; })(),
                  ConfigError);
  CHECK_NOTHROW(bad([](json&) {})());
}

TEST_CASE("config: default pool spans capacity, training length and overconfidence") {
  const auto c = default_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.teachers.size() >= 8);
  CHECK(c.find_teacher("w128-long-m5") != nullptr);
  CHECK(c.find_teacher("w128-long-m5")->kind == TeacherRecipe::Kind::Overconfident);
  CHECK(c.student.describe() == "mlp[8]-tanh");
  CHECK(c.seeds.size() >= 5);
}

TEST_CASE("pipeline: two teachers give rankings but no correlations") {
  auto c = tiny_config();
  c.teachers.pop_back();
  c.seeds = {1, 2};
  const auto r = run_pipeline(c);
  REQUIRE(r.teachers.size() == 2);
  REQUIRE(r.metrics.size() == 3);
  for (const auto& m : r.metrics) {
    CHECK(m.ranking.order.size() == 2);
    CHECK_FALSE(m.ranking.selected.empty());
    CHECK_FALSE(m.correlation.has_value());
    CHECK(m.correlation_note == "fewer than 3 teachers");
  }
  const auto j = report_to_json(r);
  CHECK(j["metrics"][0]["correlation"].is_null());
}

TEST_CASE("pipeline: every (teacher, seed) pair maps to one accuracy cell in canonical order") {
  const auto c = tiny_config();
  const auto r = run_pipeline(c);
  REQUIRE(r.teachers.size() == 3);
  CHECK(r.teachers[0].id == "a");
  CHECK(r.teachers[1].id == "a-m2");
  CHECK(r.teachers[2].id == "b");
  for (const auto& t : r.teachers) {
    REQUIRE(t.accuracies.size() == c.seeds.size());
    for (std::size_t i = 0; i < c.seeds.size(); ++i) CHECK(t.accuracies[i].seed == c.seeds[i]);
    CHECK(t.summaries.size() == 3);
    CHECK(t.topk_values.size() == 5);
    CHECK(t.mean_topk.size() == 5);
  }
  CHECK(r.ce_baseline.size() == c.seeds.size());
  REQUIRE(r.ce_mean.has_value());
  CHECK(r.provenance.config_hash == io::checksum_hex(config_hash(c)));
  // the wrapper leaves argmax and so TAC unchanged
  CHECK(r.teacher("a").summary(MetricKind::TAC).mean == r.teacher("a-m2").summary(MetricKind::TAC).mean);
}

TEST_CASE("pipeline: output does not depend on the number of jobs") {
  const auto c = tiny_config();
  PipelineOptions one, many;
  many.jobs = 6;
  const auto a = run_pipeline(c, one);
  const auto b = run_pipeline(c, many);
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
  CHECK(render_csv(a) == render_csv(b));
  CHECK(render_markdown(a) == render_markdown(b));
}

TEST_CASE("pipeline: R12 and SSP select a calibrated teacher over its overconfident twin") {
  ExperimentConfig c = tiny_config();
  c.teachers = {live("calibrated", 32, 15), wrap("calibrated-m5", "calibrated", 5.0)};
  c.seeds = {1};
  c.ce_baseline = false;
  const auto r = run_pipeline(c);
  CHECK(r.metric(MetricKind::R12).ranking.selected == "calibrated");
  CHECK(r.metric(MetricKind::SSP).ranking.selected == "calibrated");
  CHECK(r.teacher("calibrated-m5").summary(MetricKind::R12).mean >
        r.teacher("calibrated").summary(MetricKind::R12).mean);
  CHECK_FALSE(r.ce_mean.has_value());
}

TEST_CASE("pipeline: online mode folds every seed's training pass into the teacher metrics") {
  auto c = tiny_config();
  c.seeds = {1, 2};
  c.mode = MetricMode::Online;
  const auto r = run_pipeline(c);
  CHECK(r.mode == "online");
  const auto& ssp = r.teacher("a").summary(MetricKind::SSP);
  const auto n_train = static_cast<std::uint64_t>(make_default_split(c.dataset, c.test_fraction).train.size());
  CHECK(ssp.total() == n_train * static_cast<std::uint64_t>(c.hyper.epochs) * c.seeds.size());
  CHECK(ssp.per_epoch_means.size() == static_cast<std::size_t>(c.hyper.epochs) * c.seeds.size());
}

TEST_CASE("pipeline: AUG-KD reports carry the structural label") {
  auto c = tiny_config();
  c.hyper.strategy = Strategy::AUG_KD;
  c.seeds = {1};
  const auto r = run_pipeline(c);
  CHECK(r.strategy == "AUG-KD (TGDA-structure)");
  CHECK(r.mode == "online");
  CHECK(render_markdown(r).find("AUG-KD (TGDA-structure)") != std::string::npos);
}

TEST_CASE("pipeline: an exported teacher scores exactly like the live one") {
  const auto dir = scratch("external_teacher");
  auto c = tiny_config();
  c.seeds = {1, 2};
  std::string dataset_id;
  const auto data = load_experiment_data(c, &dataset_id);
  const std::string only[] = {"a"};
  const auto prepared = prepare_teachers(c, data, 1, only);
  io::write_labels(dir / "train.labels", data.train.labels);
  io::write_labels(dir / "test.labels", data.test.labels);
  io::write_logits(dir / "a.train.lgts", prepared[0].train_logits,
                   io::Manifest{"a", dataset_id, "train", std::nullopt, "train.labels", 0});
  io::write_logits(dir / "a.test.lgts", prepared[0].test_logits,
                   io::Manifest{"a", dataset_id, "test", std::nullopt, "test.labels", 0});

  auto ext = c;
  ext.teachers.pop_back();  // the wrapper needs the live base
  ext.teachers[0] = TeacherRecipe{};
  ext.teachers[0].id = "a-exported";
  ext.teachers[0].kind = TeacherRecipe::Kind::External;
  ext.teachers[0].logits = dir / "a.train.lgts";
  ext.teachers[0].test_logits = dir / "a.test.lgts";
  const auto live_report = run_pipeline(c);
  const auto ext_report = run_pipeline(ext);
  for (MetricKind k : kAllMetrics)
    CHECK(live_report.teacher("a").summary(k) == ext_report.teacher("a-exported").summary(k));
  CHECK(live_report.teacher("a").accuracies == ext_report.teacher("a-exported").accuracies);
}

TEST_CASE("pipeline: failures name the teacher and keep their category") {
  const auto dir = scratch("bad_external");
  io::write_labels(dir / "l", std::vector<Label>{0, 1});
  LogitMatrix small(2, 6);
  small.setRandom();
  io::write_logits(dir / "x.lgts", small, io::Manifest{"x", "tiny", "train", std::nullopt, "l", 0});
  auto c = tiny_config();
  c.teachers[1] = TeacherRecipe{};
  c.teachers[1].id = "shrunken";
  c.teachers[1].kind = TeacherRecipe::Kind::External;
  c.teachers[1].logits = dir / "x.lgts";
  try {
    run_pipeline(c);
    FAIL("expected a failure");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("teacher 'shrunken'") != std::string::npos);
  }

  auto diverging = tiny_config();
  diverging.student.activation = Activation::Relu;
  diverging.hyper.lr = 1e200;
  try {
    run_pipeline(diverging);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
}

TEST_CASE("correlate: bucket shares, per-dataset means and selection rows") {
  SUBCASE("three experiments, one per bucket") {
    const std::vector<ExperimentReport> reports{fake_report("d1", {fake_metric(MetricKind::R12, 0.4)}),
                                                fake_report("d1", {fake_metric(MetricKind::R12, -0.6)}),
                                                fake_report("d2", {fake_metric(MetricKind::R12, 0.8)})};
    const auto t = correlate_experiments(reports);
    const auto& b = t.buckets.at(MetricKind::R12);
    CHECK(b.n == 3);
    CHECK(b.weak == doctest::Approx(100.0 / 3.0));
    CHECK(b.modest == doctest::Approx(100.0 / 3.0));
    CHECK(b.strong == doctest::Approx(100.0 / 3.0));
    CHECK(t.mean_abs_rho_by_dataset.at("d1").at(MetricKind::R12) == doctest::Approx(0.5));
    CHECK(t.mean_abs_rho_by_dataset.at("d2").at(MetricKind::R12) == doctest::Approx(0.8));
    CHECK(t.mean_abs_rho_overall.at(MetricKind::R12) == doctest::Approx(0.6));
    CHECK(t.selection.size() == 3);
    CHECK(t.selection[0].selected_teacher.at(MetricKind::R12) == "x");
  }
  SUBCASE("signed correlations average on magnitude") {
    const std::vector<ExperimentReport> reports{fake_report("d3", {fake_metric(MetricKind::SSP, 0.717)}),
                                                fake_report("d3", {fake_metric(MetricKind::SSP, -0.541)})};
    const auto t = correlate_experiments(reports);
    CHECK(t.mean_abs_rho_by_dataset.at("d3").at(MetricKind::SSP) == doctest::Approx(0.629));
    CHECK(t.buckets.at(MetricKind::SSP).strong == doctest::Approx(50.0));
    CHECK(t.buckets.at(MetricKind::SSP).modest == doctest::Approx(50.0));
  }
  SUBCASE("a single strong entry") {
    const std::vector<ExperimentReport> reports{fake_report("d", {fake_metric(MetricKind::TAC, 0.9)})};
    const auto t = correlate_experiments(reports);
    CHECK(t.buckets.at(MetricKind::TAC).strong == doctest::Approx(100.0));
    CHECK(t.buckets.at(MetricKind::TAC).weak == 0.0);
    const auto md = render_tables_markdown(t);
    CHECK(md.find("100.0%") != std::string::npos);
    CHECK(tables_to_json(t)["buckets"]["TAC"]["n"] == 1);
  }
  SUBCASE("nothing to aggregate") {
    CHECK_THROWS_AS(correlate_experiments({}), EmptyInput);
    auto m = fake_metric(MetricKind::R12, 0.3);
    m.correlation.reset();
    const std::vector<ExperimentReport> reports{fake_report("d", {m})};
    CHECK_THROWS_AS(correlate_experiments(reports), EmptyInput);
  }
}

TEST_CASE("report: JSON round trip is lossless and CSV agrees with the JSON form") {
  auto c = tiny_config();
  c.seeds = {1, 2};
  PipelineOptions opt;
  opt.timestamp = "2026-01-01T00:00:00Z";
  const auto r = run_pipeline(c, opt);
  const auto text = report_to_json(r).dump(2);
  const auto back = report_from_json(json::parse(text));
  CHECK(report_to_json(back).dump(2) == text);
  CHECK(back.provenance.timestamp == opt.timestamp);

  const auto rows = parse_csv(render_csv(r));
  CHECK(rows == csv_rows(back));
  // numeric cells parse back to the exact doubles of the report
  for (const auto& row : rows) {
    if (row.section == "summary" && row.field == "mean") {
      double v = 0;
      std::from_chars(row.value.data(), row.value.data() + row.value.size(), v);
      CHECK(v == back.teacher(row.teacher).summary(metric_kind_from_string(row.metric)).mean);
    }
  }
  CHECK(render_markdown(r).find(opt.timestamp) == std::string::npos);
  CHECK(render_csv(r).find(opt.timestamp) == std::string::npos);
}

TEST_CASE("report: CSV quoting, malformed CSV and malformed JSON") {
  ExperimentReport r;
  TeacherResult t;
  t.id = "odd,\"name\"";
  t.kind = "trained";
  t.summaries = {MetricSummary{MetricKind::TAC, 0.1, 10, 0, {}}};
  t.accuracies = {{1, 0.5}};
  t.mean_accuracy = 0.5;
  r.teachers.push_back(t);
  const auto rows = parse_csv(render_csv(r));
  REQUIRE_FALSE(rows.empty());
  CHECK(rows[0].teacher == t.id);
  CHECK_THROWS_AS(parse_csv(""), FormatError);
  CHECK_THROWS_AS(parse_csv("a,b\n"), FormatError);
  CHECK_THROWS_AS(parse_csv("section,teacher,metric,seed,field,value\n1,2\n"), FormatError);
  CHECK_THROWS_AS(parse_csv("section,teacher,metric,seed,field,value\n\"open"), FormatError);
  CHECK_THROWS_AS(report_from_json(json{{"name", "x"}}), FormatError);
}

TEST_CASE("report: emit writes exactly the requested formats") {
  const auto dir = scratch("emit");
  auto c = tiny_config();
  c.seeds = {1};
  const auto r = run_pipeline(c);
  const auto formats = parse_formats("csv,json");
  const auto paths = emit_report(r, formats, dir / "out");
  REQUIRE(paths.size() == 2);
  CHECK(paths[0].filename() == "report.csv");
  CHECK(paths[1].filename() == "report.json");
  CHECK_FALSE(fs::exists(dir / "out" / "report.md"));
  CHECK(parse_formats("all").size() == 3);
  CHECK(parse_formats("md,markdown").size() == 1);
  CHECK_THROWS_AS(parse_formats("pdf"), InvalidArgument);
  CHECK_THROWS_AS(parse_formats(""), InvalidArgument);
  std::ifstream in(dir / "out" / "report.json");
  CHECK(report_to_json(report_from_json(json::parse(in))) == report_to_json(r));
}

TEST_CASE("format_double gives the shortest text that round-trips") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
  CHECK(format_double(1e300) == "1e+300");
  CHECK(format_double(-2.5) == "-2.5");
}

TEST_CASE("parallel_for visits every index once and rethrows the lowest failure") {
  for (int jobs : {1, 3, 16}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  try {
    parallel_for(10, 1, [](std::size_t i) {
      if (i >= 4) throw InvalidArgument("index " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()) == "index 4");
  }
  CHECK_THROWS_AS(parallel_for(10, 4, [](std::size_t i) {
                    if (i == 7) throw Divergence("boom");
                  }),
                  Divergence);
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}
