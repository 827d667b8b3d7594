// SPDX-License-Identifier: Apache-2.0
//
// Serialising experiment reports and cross-experiment tables.
//
// JSON is the canonical form. CSV is a long table holding every numeric
// cell of the report with shortest round-trip decimal text, so parsing it
// back yields the exact doubles stored in the JSON form. Markdown is for
// people and carries no timestamp.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kdsel/pipeline.hpp"

namespace kdsel {

enum class ReportFormat { Markdown, Csv, Json };

std::string_view to_string(ReportFormat f);
ReportFormat report_format_from_string(std::string_view name);
/// Comma-separated list, e.g. "markdown,csv". "all" selects every format.
std::vector<ReportFormat> parse_formats(std::string_view list);

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);

std::string render_markdown(const ExperimentReport& report);

struct CsvRow {
  std::string section;  // summary | accuracy | ce_baseline | correlation | selection
  std::string teacher;
  std::string metric;
  std::string seed;
  std::string field;
  std::string value;
  bool operator==(const CsvRow&) const = default;
};

std::vector<CsvRow> csv_rows(const ExperimentReport& report);
std::string render_csv(const ExperimentReport& report);
std::vector<CsvRow> parse_csv(std::string_view text);

/// Writes report.{md,csv,json} under `out_dir` and returns the paths in
/// the order requested.
std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, std::span<const ReportFormat> formats,
                                               const std::filesystem::path& out_dir);

nlohmann::json tables_to_json(const AggregateTables& tables);
std::string render_tables_markdown(const AggregateTables& tables);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace kdsel
