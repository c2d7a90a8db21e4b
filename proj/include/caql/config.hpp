#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "caql/stream.hpp"
#include "caql/trainer.hpp"

namespace caql {

// Parsed form of the run config document (sections: stream, train, run).
struct RunManifest {
  StreamConfig stream;
  std::optional<std::uint64_t> fixed_stream_seed;  // stream.seed when given
  std::optional<std::string> csv_path;             // stream.csv overrides synthesis
  SplitPolicy csv_split{SplitPolicy::Auto};
  TrainConfig train;  // method left at default; set per run
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::string out_dir{"runs"};
  nlohmann::json resolved;  // the fully-merged document, echoed into reports
};

nlohmann::json default_config_json();

// Applies a dotted-path override like "train.memory_M=5"; the value is
// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& keyval);

// Validates and extracts the manifest. Throws DomainError whose message
// names the offending dotted field path.
RunManifest parse_manifest(const nlohmann::json& doc);

}  // namespace caql
