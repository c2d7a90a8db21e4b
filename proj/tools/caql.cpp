// caql — continual action-quality learning benchmark harness.
//
// Subcommands:
//   run      execute a (method x seed) sweep from a JSON config
//   selftest run the built-in oracle suites
//   report   aggregate run reports in a directory into a markdown table

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caql/config.hpp"
#include "caql/errors.hpp"
#include "caql/selftest.hpp"
#include "caql/stream.hpp"
#include "caql/summary.hpp"
#include "caql/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using caql::RunManifest;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty())
    throw caql::DomainError("CAQL_SEED: no seeds in '" + text + "'");
  return seeds;
}

struct RunJob {
  std::string method;
  std::uint64_t seed;
};

int cmd_run(const std::string& config_path,
            const std::vector<std::string>& overrides,
            const std::string& out_override, unsigned jobs) {
  nlohmann::json doc;
  RunManifest manifest;
  try {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "error: cannot open config '" << config_path << "'\n";
      return kExitUsage;
    }
    doc = nlohmann::json::parse(in);
    for (const auto& kv : overrides) caql::apply_override(doc, kv);
    manifest = caql::parse_manifest(doc);
    if (!out_override.empty()) manifest.out_dir = out_override;
    if (const char* env_seed = std::getenv("CAQL_SEED"))
      manifest.seeds = parse_seed_list(env_seed);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
    return kExitUsage;
  } catch (const caql::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    fs::create_directories(manifest.out_dir);

    std::vector<RunJob> run_list;
    for (const auto& method : manifest.methods)
      for (const auto seed : manifest.seeds) run_list.push_back({method, seed});

    std::vector<caql::RunRow> rows(run_list.size());
    std::vector<std::string> reports(run_list.size());
    std::vector<std::string> errors(run_list.size());
    std::atomic<std::size_t> next{0};

    // CSV-backed streams are shared; synthetic streams are per-seed worlds.
    std::vector<caql::SessionData> csv_stream;
    if (manifest.csv_path) {
      caql::CsvLoadOptions opt;
      opt.split = manifest.csv_split;
      opt.grade_count = manifest.stream.grade_count;
      opt.score_low = manifest.stream.score_low;
      opt.score_high = manifest.stream.score_high;
      csv_stream = caql::load_feature_csv(*manifest.csv_path, opt);
    }

    auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= run_list.size()) return;
        const RunJob& job = run_list[i];
        try {
          caql::TrainConfig cfg = manifest.train;
          cfg.method = caql::method_from_name(job.method);
          cfg.seed = job.seed;

          std::vector<caql::SessionData> stream;
          if (manifest.csv_path) {
            stream = csv_stream;
          } else {
            caql::StreamConfig scfg = manifest.stream;
            scfg.seed = manifest.fixed_stream_seed ? *manifest.fixed_stream_seed
                                                   : job.seed;
            stream = caql::generate_synthetic_stream(scfg);
          }

          const auto t0 = std::chrono::steady_clock::now();
          const caql::ExperimentResult result = caql::run_experiment(
              cfg, stream, manifest.stream.score_low,
              manifest.stream.score_high);
          const double wall =
              std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();

          reports[i] = caql::experiment_report_json(
              result, manifest.resolved.dump(), job.method, job.seed);

          caql::RunRow row;
          row.method = job.method;
          row.seed = job.seed;
          row.rho_avg = result.metrics.rho_avg;
          row.rho_aft = result.metrics.rho_aft;
          row.rho_fwt = result.metrics.rho_fwt;
          row.rmse = result.metrics.rmse_value;
          row.deviation_stale_mse = result.metrics.deviation_stale_mse;
          row.deviation_refreshed_mse = result.metrics.deviation_refreshed_mse;
          row.wall_seconds = wall;
          row.report_file =
              job.method + "_seed" + std::to_string(job.seed) + ".json";
          rows[i] = std::move(row);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    };

    const unsigned n_workers =
        std::max(1u, std::min<unsigned>(jobs, run_list.size()));
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < run_list.size(); ++i) {
      if (!errors[i].empty()) {
        std::cerr << "error: run " << run_list[i].method << "/seed"
                  << run_list[i].seed << " failed: " << errors[i] << "\n";
        return kExitRuntime;
      }
      const fs::path path = fs::path(manifest.out_dir) / rows[i].report_file;
      std::ofstream out(path, std::ios::binary);
      out << reports[i];
      std::cout << run_list[i].method << " seed " << run_list[i].seed
                << ": rho_avg="
                << (rows[i].rho_avg ? std::to_string(*rows[i].rho_avg) : "—")
                << " (" << path.string() << ")\n";
    }

    std::ofstream csv(fs::path(manifest.out_dir) / "summary.csv",
                      std::ios::binary);
    csv << caql::summary_csv(rows);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_report(const std::string& dir) {
  try {
    const auto rows = caql::read_report_dir(dir);
    std::cout << caql::render_markdown_summary(rows, std::cerr);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual action-quality learning benchmark"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "execute a config-driven sweep");
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  unsigned jobs = 1;
  run->add_option("--config", config_path, "JSON config file")->required();
  run->add_option("--set", overrides, "dotted-path override, e.g. train.memory_M=5");
  run->add_option("--out", out_dir, "output directory (overrides run.out_dir)");
  run->add_option("--jobs", jobs, "parallel runs")->default_val(1);

  auto* selftest = app.add_subcommand("selftest", "run the oracle suites");
  bool corrupt_ties = false;
  selftest
      ->add_flag("--corrupt-srcc-ties", corrupt_ties,
                 "negative control: corrupt the tie rule, expect failure")
      ->group("");  // hidden

  auto* report = app.add_subcommand("report", "aggregate run reports");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory of run reports")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (run->parsed()) return cmd_run(config_path, overrides, out_dir, jobs);
  if (selftest->parsed())
    return caql::run_selftest(std::cout, {corrupt_ties});
  if (report->parsed()) return cmd_report(report_dir);
  return kExitUsage;
}
