// SPDX-License-Identifier: Apache-2.0
#include "kdsel/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdsel/error.hpp"
#include "kdsel/logit_io.hpp"

namespace kdsel {

using nlohmann::json;

namespace {

json summary_to_json(const MetricSummary& s) {
  json epochs = json::array();
  for (const auto& e : s.per_epoch_means) epochs.push_back(e ? json(*e) : json(nullptr));
  return json{{"metric", to_string(s.kind)},
              {"mean", s.mean},
              {"n_included", s.n_included},
              {"n_skipped", s.n_skipped},
              {"per_epoch_means", std::move(epochs)}};
}

MetricSummary summary_from_json(const json& j) {
  MetricSummary s;
  s.kind = metric_kind_from_string(j.at("metric").get<std::string>());
  s.mean = j.at("mean").get<double>();
  s.n_included = j.at("n_included").get<std::uint64_t>();
  s.n_skipped = j.at("n_skipped").get<std::uint64_t>();
  for (const auto& e : j.at("per_epoch_means"))
    s.per_epoch_means.push_back(e.is_null() ? std::nullopt : std::optional<double>(e.get<double>()));
  return s;
}

json accuracies_to_json(const std::vector<SeedAccuracy>& v) {
  json out = json::array();
  for (const auto& a : v) out.push_back(json{{"seed", a.seed}, {"accuracy", a.accuracy}});
  return out;
}

std::vector<SeedAccuracy> accuracies_from_json(const json& j) {
  std::vector<SeedAccuracy> out;
  for (const auto& a : j) out.push_back({a.at("seed").get<std::uint64_t>(), a.at("accuracy").get<double>()});
  return out;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr const char* kCsvHeader = "section,teacher,metric,seed,field,value";

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::Markdown: return "markdown";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
  }
  return "?";
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw InvalidArgument("unknown report format '" + std::string(name) + "'");
}

std::vector<ReportFormat> parse_formats(std::string_view list) {
  if (list == "all") return {ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json};
  std::vector<ReportFormat> out;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto item = list.substr(0, comma);
    const auto f = report_format_from_string(item);
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InvalidArgument("no report format given");
  return out;
}

json report_to_json(const ExperimentReport& r) {
  json teachers = json::array();
  for (const auto& t : r.teachers) {
    json summaries = json::array();
    for (const auto& s : t.summaries) summaries.push_back(summary_to_json(s));
    teachers.push_back(json{{"id", t.id},
                            {"kind", t.kind},
                            {"metrics", std::move(summaries)},
                            {"topk_values", t.topk_values},
                            {"topk_indices", t.topk_indices},
                            {"mean_topk", t.mean_topk},
                            {"accuracies", accuracies_to_json(t.accuracies)},
                            {"mean_accuracy", t.mean_accuracy}});
  }
  json metrics = json::array();
  for (const auto& m : r.metrics) {
    json corr = nullptr;
    if (m.correlation)
      corr = json{{"rho", m.correlation->rho},
                  {"abs_rho", m.correlation->abs_rho},
                  {"bucket", to_string(m.correlation->bucket)},
                  {"n_points", m.correlation->n_points}};
    metrics.push_back(json{{"metric", to_string(m.kind)},
                           {"ranking", m.ranking.order},
                           {"selected", m.ranking.selected},
                           {"selected_accuracy", m.selected_accuracy},
                           {"correlation", std::move(corr)},
                           {"correlation_note", m.correlation_note}});
  }
  return json{{"name", r.name},
              {"dataset_id", r.dataset_id},
              {"student", r.student},
              {"strategy", r.strategy},
              {"mode", r.mode},
              {"seeds", r.seeds},
              {"teachers", std::move(teachers)},
              {"metrics", std::move(metrics)},
              {"ce_baseline", accuracies_to_json(r.ce_baseline)},
              {"ce_mean", r.ce_mean ? json(*r.ce_mean) : json(nullptr)},
              {"warnings", r.warnings},
              {"provenance",
               json{{"config_hash", r.provenance.config_hash},
                    {"toolkit_version", r.provenance.toolkit_version},
                    {"timestamp", r.provenance.timestamp}}}};
}

ExperimentReport report_from_json(const json& j) {
  try {
    ExperimentReport r;
    r.name = j.at("name").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.student = j.at("student").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& tj : j.at("teachers")) {
      TeacherResult t;
      t.id = tj.at("id").get<std::string>();
      t.kind = tj.at("kind").get<std::string>();
      for (const auto& s : tj.at("metrics")) t.summaries.push_back(summary_from_json(s));
      t.topk_values = tj.at("topk_values").get<std::vector<double>>();
      t.topk_indices = tj.at("topk_indices").get<std::vector<std::int64_t>>();
      t.mean_topk = tj.at("mean_topk").get<std::vector<double>>();
      t.accuracies = accuracies_from_json(tj.at("accuracies"));
      t.mean_accuracy = tj.at("mean_accuracy").get<double>();
      r.teachers.push_back(std::move(t));
    }
    for (const auto& mj : j.at("metrics")) {
      MetricResult m;
      m.kind = metric_kind_from_string(mj.at("metric").get<std::string>());
      m.ranking.kind = m.kind;
      m.ranking.order = mj.at("ranking").get<std::vector<std::string>>();
      m.ranking.selected = mj.at("selected").get<std::string>();
      m.selected_accuracy = mj.at("selected_accuracy").get<double>();
      if (const auto& c = mj.at("correlation"); !c.is_null())
        m.correlation = CorrelationEntry{m.kind, c.at("rho").get<double>(), c.at("abs_rho").get<double>(),
                                         bucket_from_string(c.at("bucket").get<std::string>()),
                                         c.at("n_points").get<std::size_t>()};
      m.correlation_note = mj.at("correlation_note").get<std::string>();
      r.metrics.push_back(std::move(m));
    }
    r.ce_baseline = accuracies_from_json(j.at("ce_baseline"));
    if (const auto& ce = j.at("ce_mean"); !ce.is_null()) r.ce_mean = ce.get<double>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    const auto& p = j.at("provenance");
    r.provenance = {p.at("config_hash").get<std::string>(), p.at("toolkit_version").get<std::string>(),
                    p.value("timestamp", std::string())};
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string render_markdown(const ExperimentReport& r) {
  std::ostringstream md;
  md << "# Teacher selection report: " << r.name << "\n\n";
  md << "- dataset: `" << r.dataset_id << "`\n";
  md << "- student: `" << r.student << "`\n";
  md << "- strategy: " << r.strategy << "\n";
  md << "- metric mode: " << r.mode << "\n";
  md << "- seeds:";
  for (auto s : r.seeds) md << ' ' << s;
  md << "\n- config hash: `" << r.provenance.config_hash << "`, toolkit " << r.provenance.toolkit_version << "\n\n";

  md << "## Teachers\n\n| teacher | kind | TAC | SSP | R12 | R12 skipped | student acc (mean) |";
  for (auto s : r.seeds) md << " seed " << s << " |";
  md << "\n|---|---|---:|---:|---:|---:|---:|";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) md << "---:|";
  md << '\n';
  for (const auto& t : r.teachers) {
    md << "| " << t.id << " | " << t.kind;
    for (MetricKind k : kAllMetrics) md << " | " << fixed(t.summary(k).mean);
    const auto& r12 = t.summary(MetricKind::R12);
    md << " | " << r12.n_skipped << '/' << r12.total() << " | " << fixed(t.mean_accuracy) << " |";
    for (const auto& a : t.accuracies) md << ' ' << fixed(a.accuracy) << " |";
    md << '\n';
  }
  if (r.ce_mean) {
    md << "\nCross-entropy-only student: mean accuracy " << fixed(*r.ce_mean) << " (";
    for (std::size_t i = 0; i < r.ce_baseline.size(); ++i)
      md << (i ? ", " : "") << "seed " << r.ce_baseline[i].seed << ": " << fixed(r.ce_baseline[i].accuracy);
    md << ")\n";
  }

  md << "\n## Selection and rank correlation\n\n"
        "| metric | ranking (best first) | selected | selected acc | Spearman rho | bucket |\n"
        "|---|---|---|---:|---:|---|\n";
  for (const auto& m : r.metrics) {
    md << "| " << to_string(m.kind) << " | ";
    for (std::size_t i = 0; i < m.ranking.order.size(); ++i) md << (i ? " > " : "") << m.ranking.order[i];
    md << " | " << m.ranking.selected << " | " << fixed(m.selected_accuracy) << " | ";
    if (m.correlation)
      md << fixed(m.correlation->rho) << " | " << to_string(m.correlation->bucket);
    else
      md << "n/a | " << m.correlation_note;
    md << " |\n";
  }

  md << "\n## Top-k raw logits\n\nFirst training sample, then the mean of the sorted top-k over the training split.\n\n";
  for (const auto& t : r.teachers) {
    md << "- " << t.id << ": sample 0";
    for (std::size_t i = 0; i < t.topk_values.size(); ++i)
      md << (i ? ", " : " [") << "c" << t.topk_indices[i] << '=' << fixed(t.topk_values[i], 3);
    md << "]; mean";
    for (std::size_t i = 0; i < t.mean_topk.size(); ++i) md << (i ? ", " : " [") << fixed(t.mean_topk[i], 3);
    md << "]\n";
  }

  if (!r.warnings.empty()) {
    md << "\n## Warnings\n\n";
    for (const auto& w : r.warnings) md << "- " << w << '\n';
  }
  return md.str();
}

std::vector<CsvRow> csv_rows(const ExperimentReport& r) {
  std::vector<CsvRow> rows;
  for (const auto& t : r.teachers) {
    for (const auto& s : t.summaries) {
      const std::string m(to_string(s.kind));
      rows.push_back({"summary", t.id, m, "", "mean", format_double(s.mean)});
      rows.push_back({"summary", t.id, m, "", "n_included", std::to_string(s.n_included)});
      rows.push_back({"summary", t.id, m, "", "n_skipped", std::to_string(s.n_skipped)});
    }
    for (const auto& a : t.accuracies)
      rows.push_back({"accuracy", t.id, "", std::to_string(a.seed), "accuracy", format_double(a.accuracy)});
    rows.push_back({"accuracy", t.id, "", "", "mean_accuracy", format_double(t.mean_accuracy)});
  }
  for (const auto& a : r.ce_baseline)
    rows.push_back({"ce_baseline", "", "", std::to_string(a.seed), "accuracy", format_double(a.accuracy)});
  if (r.ce_mean) rows.push_back({"ce_baseline", "", "", "", "mean_accuracy", format_double(*r.ce_mean)});
  for (const auto& m : r.metrics) {
    const std::string k(to_string(m.kind));
    rows.push_back({"selection", m.ranking.selected, k, "", "selected_accuracy", format_double(m.selected_accuracy)});
    if (m.correlation) {
      rows.push_back({"correlation", "", k, "", "rho", format_double(m.correlation->rho)});
      rows.push_back({"correlation", "", k, "", "bucket", std::string(to_string(m.correlation->bucket))});
      rows.push_back({"correlation", "", k, "", "n_points", std::to_string(m.correlation->n_points)});
    }
  }
  return rows;
}

std::string render_csv(const ExperimentReport& r) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& row : csv_rows(r)) {
    for (const auto* cell : {&row.section, &row.teacher, &row.metric, &row.seed, &row.field}) {
      out += csv_escape(*cell);
      out += ',';
    }
    out += csv_escape(row.value);
    out += '\n';
  }
  return out;
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(cell));
      cell.clear();
      records.push_back(std::move(fields));
      fields.clear();
      any = false;
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw FormatError("CSV: unterminated quoted field");
  if (any || !fields.empty()) {
    fields.push_back(std::move(cell));
    records.push_back(std::move(fields));
  }
  if (records.empty()) throw FormatError("CSV: empty input");
  std::string header;
  for (std::size_t i = 0; i < records[0].size(); ++i) header += (i ? "," : "") + records[0][i];
  if (header != kCsvHeader) throw FormatError("CSV: unexpected header '" + header + "'");
  std::vector<CsvRow> rows;
  for (std::size_t i = 1; i < records.size(); ++i) {
    auto& f = records[i];
    if (f.size() != 6) throw FormatError("CSV: line " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                                         " fields, expected 6");
    rows.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]), std::move(f[3]), std::move(f[4]),
                    std::move(f[5])});
  }
  return rows;
}

std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, std::span<const ReportFormat> formats,
                                               const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (auto f : formats) {
    std::filesystem::path path;
    std::string text;
    switch (f) {
      case ReportFormat::Markdown:
        path = out_dir / "report.md";
        text = render_markdown(r);
        break;
      case ReportFormat::Csv:
        path = out_dir / "report.csv";
        text = render_csv(r);
        break;
      case ReportFormat::Json:
        path = out_dir / "report.json";
        text = report_to_json(r).dump(2) + "\n";
        break;
    }
    const auto* p = reinterpret_cast<const std::byte*>(text.data());
    io::write_file_bytes(path, std::span<const std::byte>(p, text.size()));
    written.push_back(path);
  }
  return written;
}

json tables_to_json(const AggregateTables& t) {
  json buckets = json::object();
  for (const auto& [k, b] : t.buckets)
    buckets[std::string(to_string(k))] = {{"weak", b.weak}, {"modest", b.modest}, {"strong", b.strong}, {"n", b.n}};
  json by_ds = json::object();
  for (const auto& [ds, per] : t.mean_abs_rho_by_dataset)
    for (const auto& [k, v] : per) by_ds[ds][std::string(to_string(k))] = v;
  json overall = json::object();
  for (const auto& [k, v] : t.mean_abs_rho_overall) overall[std::string(to_string(k))] = v;
  json sel = json::array();
  for (const auto& row : t.selection) {
    json acc = json::object();
    json who = json::object();
    for (const auto& [k, v] : row.selected_accuracy) acc[std::string(to_string(k))] = v;
    for (const auto& [k, v] : row.selected_teacher) who[std::string(to_string(k))] = v;
    sel.push_back({{"report", row.report},
                   {"dataset_id", row.dataset_id},
                   {"ce_mean", row.ce_mean ? json(*row.ce_mean) : json(nullptr)},
                   {"selected_accuracy", std::move(acc)},
                   {"selected_teacher", std::move(who)}});
  }
  return json{{"buckets", std::move(buckets)},
              {"mean_abs_rho_by_dataset", std::move(by_ds)},
              {"mean_abs_rho_overall", std::move(overall)},
              {"selection", std::move(sel)}};
}

std::string render_tables_markdown(const AggregateTables& t) {
  std::ostringstream md;
  md << "## Correlation strength (share of experiments)\n\n| metric | weak | modest | strong | n |\n"
        "|---|---:|---:|---:|---:|\n";
  for (const auto& [k, b] : t.buckets)
    md << "| " << to_string(k) << " | " << fixed(b.weak, 1) << "% | " << fixed(b.modest, 1) << "% | "
       << fixed(b.strong, 1) << "% | " << b.n << " |\n";

  md << "\n## Mean |rho| by dataset\n\n| dataset |";
  for (MetricKind k : kAllMetrics) md << ' ' << to_string(k) << " |";
  md << "\n|---|---:|---:|---:|\n";
  auto cell = [](const std::map<MetricKind, double>& m, MetricKind k) {
    const auto it = m.find(k);
    return it == m.end() ? std::string("n/a") : fixed(it->second, 3);
  };
  for (const auto& [ds, per] : t.mean_abs_rho_by_dataset) {
    md << "| " << ds << " |";
    for (MetricKind k : kAllMetrics) md << ' ' << cell(per, k) << " |";
    md << '\n';
  }
  md << "| average |";
  for (MetricKind k : kAllMetrics) md << ' ' << cell(t.mean_abs_rho_overall, k) << " |";
  md << "\n\n## Student accuracy of the selected teacher\n\n| report | dataset | CE only |";
  for (MetricKind k : kAllMetrics) md << ' ' << to_string(k) << " |";
  md << "\n|---|---|---:|---:|---:|---:|\n";
  for (const auto& row : t.selection) {
    md << "| " << row.report << " | " << row.dataset_id << " | " << (row.ce_mean ? fixed(*row.ce_mean) : "n/a")
       << " |";
    for (MetricKind k : kAllMetrics) {
      const auto it = row.selected_accuracy.find(k);
      if (it == row.selected_accuracy.end())
        md << " n/a |";
      else
        md << ' ' << fixed(it->second) << " (" << row.selected_teacher.at(k) << ") |";
    }
    md << '\n';
  }
  return md.str();
}

}  // namespace kdsel
