#include "caql/summary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "caql/errors.hpp"

namespace caql {

namespace {

using nlohmann::json;

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string cell(const std::optional<double>& v) {
  return v ? fmt(*v) : "";
}

}  // namespace

std::vector<RunRow> read_report_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw DomainError("report: '" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<RunRow> rows;
  for (const auto& path : files) {
    std::ifstream in(path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error&) {
      continue;  // not a report
    }
    if (!j.contains("caql_report_version")) continue;
    RunRow row;
    row.method = j.value("method", "unknown");
    row.seed = j.value("seed", std::uint64_t{0});
    row.report_file = path.filename().string();
    if (j.contains("metrics")) {
      const json& m = j.at("metrics");
      row.rho_avg = opt_from(m, "rho_avg");
      row.rho_aft = opt_from(m, "rho_aft");
      row.rho_fwt = opt_from(m, "rho_fwt");
      row.rmse = opt_from(m, "rmse");
      row.deviation_stale_mse = opt_from(m, "deviation_stale_mse");
      row.deviation_refreshed_mse = opt_from(m, "deviation_refreshed_mse");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw DomainError("report: no run reports found in '" + dir + "'");
  return rows;
}

std::string summary_csv(const std::vector<RunRow>& rows) {
  std::ostringstream out;
  out << "method,seed,rho_avg,rho_aft,rho_fwt,rmse,deviation_stale_mse,"
         "deviation_refreshed_mse,wall_seconds,report_file\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.seed << ',' << cell(r.rho_avg) << ','
        << cell(r.rho_aft) << ',' << cell(r.rho_fwt) << ',' << cell(r.rmse)
        << ',' << cell(r.deviation_stale_mse) << ','
        << cell(r.deviation_refreshed_mse) << ',' << cell(r.wall_seconds)
        << ',' << r.report_file << "\n";
  }
  return out.str();
}

namespace {

struct Agg {
  std::vector<double> values;
  std::size_t missing{0};

  void add(const std::optional<double>& v) {
    if (v)
      values.push_back(*v);
    else
      ++missing;
  }

  std::string render() const {
    if (values.empty()) return "—";
    const double n = static_cast<double>(values.size());
    double mean = 0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double stddev = values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    return fmt4(mean) + " ± " + fmt4(stddev);
  }
};

}  // namespace

std::string render_markdown_summary(const std::vector<RunRow>& rows,
                                    std::ostream& warnings) {
  std::map<std::string, std::vector<const RunRow*>> by_method;
  for (const auto& r : rows) by_method[r.method].push_back(&r);

  std::ostringstream out;
  out << "| method | runs | rho_avg | rho_aft | rho_fwt |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& [method, list] : by_method) {
    Agg avg, aft, fwt;
    for (const RunRow* r : list) {
      avg.add(r->rho_avg);
      aft.add(r->rho_aft);
      fwt.add(r->rho_fwt);
    }
    for (const auto& [name, agg] :
         {std::pair<const char*, const Agg&>{"rho_avg", avg},
          {"rho_aft", aft},
          {"rho_fwt", fwt}})
      if (agg.missing > 0)
        warnings << "warning: " << method << " is missing " << agg.missing
                 << " " << name << " value(s)\n";
    out << "| " << method << " | " << list.size() << " | " << avg.render()
        << " | " << aft.render() << " | " << fwt.render() << " |\n";
  }

  out << "\n| method | deviation stale (MSE) | deviation refreshed (MSE) |\n";
  out << "|---|---|---|\n";
  for (const auto& [method, list] : by_method) {
    Agg stale, refreshed;
    for (const RunRow* r : list) {
      stale.add(r->deviation_stale_mse);
      refreshed.add(r->deviation_refreshed_mse);
    }
    out << "| " << method << " | " << stale.render() << " | "
        << refreshed.render() << " |\n";
  }
  return out.str();
}

}  // namespace caql
