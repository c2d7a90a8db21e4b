#include "caql/config.hpp"

#include <set>

#include "caql/errors.hpp"

namespace caql {

using nlohmann::json;

json default_config_json() {
  return json{
      {"stream",
       {{"G", 5},
        {"S", 20},
        {"T", 5},
        {"d_in", 16},
        {"test_per_session", 32},
        {"score_low", 0.0},
        {"score_high", 100.0},
        {"shift_strength", 0.5},
        {"label_noise_std", 0.0},
        {"label_fraction", 1.0}}},
      {"train",
       {{"mode", "offline"},
        {"b1", 5},
        {"b2", 3},
        {"memory_M", 10},
        {"epsilon", 0.05},
        {"tune_mode", "all_below"},
        {"lambda_tune", 1.0},
        {"lambda_proj", 1.0},
        {"lambda_reg", 1.0},
        {"task_order", json::array()},
        {"patience", 5},
        {"max_epochs", 6},
        {"lr", 1e-2},
        {"base_lr", 5e-3},
        {"weight_decay", 1e-3},
        {"backbone_widths", {64, 64, 64, 32}},
        {"regressor_hidden", 16},
        {"projector_hidden", 32},
        {"layersel_bins", 5},
        {"freeze_layer_selection", false},
        {"ous_use_predictions", false}}},
      {"run",
       {{"methods",
         {"magrpp", "sequential_ft", "joint_training", "naive_feature_replay"}},
        {"seeds", {0, 1, 2, 3, 4}},
        {"out_dir", "runs"}}}};
}

void apply_override(nlohmann::json& doc, const std::string& keyval) {
  const auto eq = keyval.find('=');
  if (eq == std::string::npos || eq == 0)
    throw DomainError("--set: expected key.path=value, got '" + keyval + "'");
  const std::string path = keyval.substr(0, eq);
  const std::string raw = keyval.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare string
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw DomainError("--set: empty path segment in '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

namespace {

const json& section(const json& doc, const char* name) {
  if (!doc.contains(name) || !doc.at(name).is_object())
    throw DomainError(std::string(name) + ": missing or not an object");
  return doc.at(name);
}

template <typename T>
T field(const json& obj, const std::string& path, const char* key,
        const T& fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DomainError(path + "." + key + ": wrong type");
  }
}

}  // namespace

RunManifest parse_manifest(const json& doc) {
  // Merge onto defaults so partial configs stay valid.
  json merged = default_config_json();
  merged.merge_patch(doc);

  RunManifest m;
  m.resolved = merged;

  const json& s = section(merged, "stream");
  m.stream.grade_count = field<std::size_t>(s, "stream", "G", 5);
  m.stream.samples_per_session = field<std::size_t>(s, "stream", "S", 20);
  m.stream.session_count =
      field<std::size_t>(s, "stream", "T", m.stream.grade_count);
  m.stream.input_dim = field<std::size_t>(s, "stream", "d_in", 16);
  m.stream.test_per_session =
      field<std::size_t>(s, "stream", "test_per_session", 32);
  m.stream.score_low = field<double>(s, "stream", "score_low", 0.0);
  m.stream.score_high = field<double>(s, "stream", "score_high", 100.0);
  m.stream.shift_strength = field<double>(s, "stream", "shift_strength", 0.5);
  m.stream.label_noise_std = field<double>(s, "stream", "label_noise_std", 0.0);
  m.stream.label_fraction = field<double>(s, "stream", "label_fraction", 1.0);
  if (s.contains("seed"))
    m.fixed_stream_seed = field<std::uint64_t>(s, "stream", "seed", 0);
  if (s.contains("csv") && !s.at("csv").is_null()) {
    const json& csv = s.at("csv");
    if (!csv.is_object() || !csv.contains("path"))
      throw DomainError("stream.csv: expected object with 'path'");
    m.csv_path = field<std::string>(csv, "stream.csv", "path", "");
    const std::string split =
        field<std::string>(csv, "stream.csv", "split", "auto");
    if (split == "auto")
      m.csv_split = SplitPolicy::Auto;
    else if (split == "column")
      m.csv_split = SplitPolicy::UseSplitColumn;
    else if (split == "hash")
      m.csv_split = SplitPolicy::HashSplit;
    else
      throw DomainError("stream.csv.split: expected auto|column|hash");
  } else {
    m.stream.validate();
  }

  const json& t = section(merged, "train");
  const std::string mode = field<std::string>(t, "train", "mode", "offline");
  if (mode == "offline")
    m.train.mode = Mode::Offline;
  else if (mode == "online")
    m.train.mode = Mode::Online;
  else
    throw DomainError("train.mode: expected offline|online");
  m.train.replay_batch = field<std::size_t>(t, "train", "b1", 5);
  m.train.batch_size = field<std::size_t>(t, "train", "b2", 3);
  m.train.memory_quota = field<std::size_t>(t, "train", "memory_M", 10);
  m.train.epsilon = field<double>(t, "train", "epsilon", 0.05);
  const std::string tune_mode =
      field<std::string>(t, "train", "tune_mode", "all_below");
  if (tune_mode == "all_below")
    m.train.tune_mode = TuneMode::AllBelow;
  else if (tune_mode == "boundary_only")
    m.train.tune_mode = TuneMode::BoundaryOnly;
  else
    throw DomainError("train.tune_mode: expected all_below|boundary_only");
  m.train.lambda_tune = field<double>(t, "train", "lambda_tune", 1.0);
  m.train.lambda_proj = field<double>(t, "train", "lambda_proj", 1.0);
  m.train.lambda_reg = field<double>(t, "train", "lambda_reg", 1.0);
  m.train.task_order =
      field<std::vector<std::size_t>>(t, "train", "task_order", {});
  m.train.patience = field<std::size_t>(t, "train", "patience", 5);
  m.train.max_epochs = field<std::size_t>(t, "train", "max_epochs", 6);
  m.train.lr = field<double>(t, "train", "lr", 1e-2);
  m.train.base_lr = field<double>(t, "train", "base_lr", 5e-3);
  m.train.weight_decay = field<double>(t, "train", "weight_decay", 1e-3);
  m.train.model.backbone_widths = field<std::vector<std::size_t>>(
      t, "train", "backbone_widths", {64, 64, 64, 32});
  m.train.model.regressor_hidden =
      field<std::size_t>(t, "train", "regressor_hidden", 16);
  m.train.model.projector_hidden =
      field<std::size_t>(t, "train", "projector_hidden", 32);
  m.train.layersel_bins = field<std::size_t>(t, "train", "layersel_bins", 5);
  m.train.freeze_layer_selection =
      field<bool>(t, "train", "freeze_layer_selection", false);
  m.train.ous_use_predictions =
      field<bool>(t, "train", "ous_use_predictions", false);
  m.train.freeze_projector =
      field<bool>(t, "train", "freeze_projector", false);
  m.train.validate();

  const json& r = section(merged, "run");
  m.methods = field<std::vector<std::string>>(
      r, "run", "methods", {"magrpp", "sequential_ft"});
  if (m.methods.empty()) throw DomainError("run.methods: must not be empty");
  for (const auto& name : m.methods) {
    try {
      method_from_name(name);
    } catch (const DomainError&) {
      throw DomainError("run.methods: unknown method '" + name + "'");
    }
  }
  m.seeds = field<std::vector<std::uint64_t>>(r, "run", "seeds", {0});
  if (m.seeds.empty()) throw DomainError("run.seeds: must not be empty");
  std::set<std::uint64_t> distinct(m.seeds.begin(), m.seeds.end());
  if (distinct.size() != m.seeds.size())
    throw DomainError("run.seeds: seeds must be distinct");
  m.out_dir = field<std::string>(r, "run", "out_dir", "runs");
  return m;
}

}  // namespace caql
