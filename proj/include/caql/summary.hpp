#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace caql {

// One run's headline numbers, as stored in a report file or produced live.
struct RunRow {
  std::string method;
  std::uint64_t seed{0};
  std::optional<double> rho_avg;
  std::optional<double> rho_aft;
  std::optional<double> rho_fwt;
  std::optional<double> rmse;
  std::optional<double> deviation_stale_mse;
  std::optional<double> deviation_refreshed_mse;
  std::optional<double> wall_seconds;  // live runs only
  std::string report_file;
};

// Reads every report JSON in `dir` (files carrying caql_report_version).
// Throws DomainError if none are found.
std::vector<RunRow> read_report_dir(const std::string& dir);

// summary.csv content, one row per run, fixed column order.
std::string summary_csv(const std::vector<RunRow>& rows);

// Markdown: per-method mean +- std over seeds for the three correlations,
// plus a deviation table. Missing cells render as an em dash and emit a
// warning on `warnings`.
std::string render_markdown_summary(const std::vector<RunRow>& rows,
                                    std::ostream& warnings);

}  // namespace caql
