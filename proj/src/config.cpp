// SPDX-License-Identifier: Apache-2.0
#include "kdsel/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "kdsel/logit_io.hpp"

namespace kdsel {
namespace {

using nlohmann::json;

std::uint64_t hash_text(const std::string& s) { return io::fnv1a64(std::as_bytes(std::span(s.data(), s.size()))); }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

// Typos in a config would otherwise fall back to defaults without notice.
void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("config: unknown key '" + key + "' in " + where);
}

TeacherRecipe teacher_from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown_keys(j, {"id", "logits", "test_logits", "base", "margin", "hidden", "activation", "epochs", "lr",
                          "batch_size", "strategy", "seed"},
                      "teacher");
  TeacherRecipe t;
  t.id = j.at("id").get<std::string>();
  if (j.contains("logits")) {
    t.kind = TeacherRecipe::Kind::External;
    t.logits = resolve(base_dir, j.at("logits").get<std::string>());
    t.test_logits = resolve(base_dir, j.value("test_logits", std::string()));
  } else if (j.contains("base")) {
    t.kind = TeacherRecipe::Kind::Overconfident;
    t.base = j.at("base").get<std::string>();
    t.margin = j.value("margin", 0.0);
  } else {
    t.kind = TeacherRecipe::Kind::Trained;
    t.hidden = j.value("hidden", t.hidden);
    t.activation = activation_from_string(j.value("activation", std::string(to_string(t.activation))));
    t.epochs = j.value("epochs", t.epochs);
    t.lr = j.value("lr", t.lr);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.strategy = strategy_from_string(j.value("strategy", std::string(to_string(t.strategy))));
    if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  }
  return t;
}

json teacher_to_json(const TeacherRecipe& t) {
  json j{{"id", t.id}};
  switch (t.kind) {
    case TeacherRecipe::Kind::Trained:
      j["hidden"] = t.hidden;
      j["activation"] = std::string(to_string(t.activation));
      j["epochs"] = t.epochs;
      j["lr"] = t.lr;
      j["batch_size"] = t.batch_size;
      j["strategy"] = std::string(to_string(t.strategy));
      j["seed"] = t.effective_seed();
      break;
    case TeacherRecipe::Kind::Overconfident:
      j["base"] = t.base;
      j["margin"] = t.margin;
      break;
    case TeacherRecipe::Kind::External:
      j["logits"] = t.logits.generic_string();
      if (!t.test_logits.empty()) j["test_logits"] = t.test_logits.generic_string();
      break;
  }
  return j;
}

TeacherRecipe trained(std::string id, int width, int epochs) {
  TeacherRecipe t;
  t.id = std::move(id);
  t.hidden = {width};
  t.epochs = epochs;
  return t;
}

TeacherRecipe wrapped(std::string id, std::string base, double margin) {
  TeacherRecipe t;
  t.id = std::move(id);
  t.kind = TeacherRecipe::Kind::Overconfident;
  t.base = std::move(base);
  t.margin = margin;
  return t;
}

}  // namespace

std::uint64_t TeacherRecipe::effective_seed() const { return seed.value_or(hash_text(id)); }

std::string_view to_string(TeacherRecipe::Kind k) {
  switch (k) {
    case TeacherRecipe::Kind::Trained: return "trained";
    case TeacherRecipe::Kind::Overconfident: return "overconfident";
    case TeacherRecipe::Kind::External: return "external";
  }
  return "?";
}

std::string StudentRecipe::describe() const {
  std::string s = "mlp[";
  for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "," : "") + std::to_string(hidden[i]);
  return s + "]-" + std::string(to_string(activation));
}

const TeacherRecipe* ExperimentConfig::find_teacher(const std::string& id) const {
  for (const auto& t : teachers)
    if (t.id == id) return &t;
  return nullptr;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (teachers.empty()) fail("teacher pool is empty");
  if (seeds.empty()) fail("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
  if (ssp_k < 2) fail("ssp_k must be >= 2");
  if (topk < 1) fail("topk must be >= 1");
  try {
    hyper.validate();
    if (dataset_path.empty()) dataset.validate();
  } catch (const InvalidInput& e) {
    fail(e.what());
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must lie in (0, 1)");
  if (!dataset_path.empty() && !std::filesystem::exists(dataset_path / "dataset.json"))
    fail("dataset path has no dataset.json: " + dataset_path.string());

  for (int w : student.hidden)
    if (w < 1) fail("student hidden widths must be positive");

  std::set<std::string> ids;
  for (const auto& t : teachers) {
    if (t.id.empty()) fail("teacher id must not be empty");
    if (!ids.insert(t.id).second) fail("duplicate teacher id '" + t.id + "'");
    switch (t.kind) {
      case TeacherRecipe::Kind::Trained:
        for (int w : t.hidden)
          if (w < 1) fail("teacher '" + t.id + "': hidden widths must be positive");
        if (t.epochs < 1 || t.batch_size < 1 || !(t.lr > 0)) fail("teacher '" + t.id + "': bad training settings");
        break;
      case TeacherRecipe::Kind::Overconfident: {
        const auto* base = find_teacher(t.base);
        if (!base) fail("teacher '" + t.id + "' wraps unknown teacher '" + t.base + "'");
        if (base->kind != TeacherRecipe::Kind::Trained) fail("teacher '" + t.id + "' must wrap a trained teacher");
        if (!(t.margin >= 0.0)) fail("teacher '" + t.id + "': margin must be >= 0");
        break;
      }
      case TeacherRecipe::Kind::External:
        if (!std::filesystem::exists(t.logits)) fail("teacher '" + t.id + "': missing logits file " + t.logits.string());
        if (!t.test_logits.empty() && !std::filesystem::exists(t.test_logits))
          fail("teacher '" + t.id + "': missing test logits file " + t.test_logits.string());
        if (hyper.strategy == Strategy::AUG_KD) fail("teacher '" + t.id + "': AUG_KD needs a live model, not exported logits");
        if (effective_mode() == MetricMode::Online) fail("teacher '" + t.id + "': online metrics need a live model");
        break;
    }
  }
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    reject_unknown_keys(j, {"name", "dataset", "teachers", "student", "hyper", "seeds", "mode", "ce_baseline", "ssp_k",
                            "topk"},
                        "the top level");
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      reject_unknown_keys(d, {"path", "n_super", "n_sub_per_super", "dim", "coarse_spread", "fine_offset",
                              "noise_sigma", "samples_per_class", "seed", "test_fraction"},
                          "dataset");
      if (d.contains("path")) {
        c.dataset_path = resolve(base_dir, d["path"].get<std::string>());
      } else {
        c.dataset = d.get<DatasetSpec>();
        c.test_fraction = d.value("test_fraction", c.test_fraction);
      }
    }
    for (const auto& t : j.at("teachers")) c.teachers.push_back(teacher_from_json(t, base_dir));
    if (j.contains("student")) {
      reject_unknown_keys(j["student"], {"hidden", "activation"}, "student");
      c.student.hidden = j["student"].value("hidden", c.student.hidden);
      c.student.activation = activation_from_string(j["student"].value("activation", std::string("tanh")));
    }
    if (j.contains("hyper"))
      reject_unknown_keys(j["hyper"], {"beta", "tau", "lr", "epochs", "batch_size", "seed", "strategy", "aug_sigma"},
                          "hyper");
    if (j.contains("hyper")) c.hyper = j["hyper"].get<Hyper>();
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("mode") && !j["mode"].is_null()) c.mode = metric_mode_from_string(j["mode"].get<std::string>());
    c.ce_baseline = j.value("ce_baseline", c.ce_baseline);
    c.ssp_k = j.value("ssp_k", c.ssp_k);
    c.topk = j.value("topk", c.topk);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  if (c.dataset_path.empty()) {
    j["dataset"] = c.dataset;
    j["dataset"]["test_fraction"] = c.test_fraction;
  } else {
    j["dataset"] = {{"path", c.dataset_path.generic_string()}};
  }
  j["teachers"] = json::array();
  for (const auto& t : c.teachers) j["teachers"].push_back(teacher_to_json(t));
  j["student"] = {{"hidden", c.student.hidden}, {"activation", std::string(to_string(c.student.activation))}};
  j["hyper"] = c.hyper;
  j["seeds"] = c.seeds;
  j["mode"] = c.mode ? json(std::string(to_string(*c.mode))) : json(nullptr);
  j["ce_baseline"] = c.ce_baseline;
  j["ssp_k"] = c.ssp_k;
  j["topk"] = c.topk;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

std::uint64_t config_hash(const ExperimentConfig& c) { return hash_text(config_to_json(c).dump()); }

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.name = "synthetic-default";
  for (int width : {8, 32, 128, 512}) {
    c.teachers.push_back(trained("w" + std::to_string(width) + "-short", width, 15));
    c.teachers.push_back(trained("w" + std::to_string(width) + "-long", width, 60));
  }
  c.teachers.push_back(wrapped("w128-long-m2", "w128-long", 2.0));
  c.teachers.push_back(wrapped("w128-long-m5", "w128-long", 5.0));
  return c;
}

}  // namespace kdsel
