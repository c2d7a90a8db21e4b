#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "caql/layersel.hpp"
#include "caql/losses.hpp"
#include "caql/memory.hpp"
#include "caql/metrics.hpp"
#include "caql/model.hpp"
#include "caql/stream.hpp"

namespace caql {

enum class Method { Magrpp, SequentialFt, JointTraining, NaiveFeatureReplay };
enum class Mode { Offline, Online };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
  Method method{Method::Magrpp};
  Mode mode{Mode::Offline};
  std::size_t replay_batch{5};   // b1
  std::size_t batch_size{3};     // b2
  std::size_t memory_quota{10};  // M per session
  double epsilon{0.05};
  TuneMode tune_mode{TuneMode::AllBelow};
  double lambda_tune{1.0};
  double lambda_proj{1.0};
  double lambda_reg{1.0};
  std::vector<std::size_t> task_order;  // empty = stream order
  std::uint64_t seed{0};
  std::size_t patience{5};
  std::size_t max_epochs{6};  // per-session cap (<= 50 offline); online runs 1
  double lr{1e-2};            // incremental sessions
  double base_lr{5e-3};       // base-session adaptation and joint training
  double weight_decay{1e-3};
  ModelConfig model;
  std::size_t layersel_bins{5};
  bool freeze_layer_selection{false};  // reuse session-1 boundary afterwards
  bool ous_use_predictions{false};     // order prototypes by g(f(x))
  bool freeze_projector{false};        // pin the projector at identity

  void validate() const;  // throws DomainError with a dotted field path
};

struct SessionResult {
  std::size_t session{0};
  ObjectiveParts losses;  // epoch means of the last epoch
  double total_loss{0.0};
  double tune_after{0.0};  // consistency loss re-evaluated after training
  double delta_t{0.0};     // parameter movement over the session
  std::size_t epochs_run{0};
  std::vector<double> test_srcc;  // on test sets 0..session
  double wall_seconds{0.0};       // not serialized; reports stay byte-stable
};

struct ExperimentResult {
  std::size_t session_count{0};
  PerfMatrix perf;
  std::vector<std::optional<double>> forward_band;  // band[t] = rho_{t-1,t}
  std::vector<double> fwt_baselines;
  MetricReport metrics;
  std::vector<SessionResult> sessions;
  std::vector<LayerAbstractionProfile> profiles;  // one per session >= 1
  std::vector<double> delta_series;
  std::optional<double> delta_forgetting_corr;
  MemoryBank bank{0};
  ModelState final_model;
};

// Finite-difference validation of one assembled training step (all loss
// terms active); returns the max relative gradient error.
double trainer_step_gradient_check(std::uint64_t seed);
double trainer_step_gradient_check_masked(std::uint64_t seed, unsigned mask);

// Euclidean norm of the concatenated parameter difference.
double delta_t_diagnostic(const ModelState& before, const ModelState& after);

// Runs one full experiment over the stream (already in task order when
// cfg.task_order is empty; otherwise the order is applied internally).
ExperimentResult run_experiment(const TrainConfig& cfg,
                                const std::vector<SessionData>& stream,
                                double score_low, double score_high);

// Deterministic JSON document for the run (config echo included verbatim).
std::string experiment_report_json(const ExperimentResult& result,
                                   const std::string& config_echo_json,
                                   const std::string& method,
                                   std::uint64_t seed);

}  // namespace caql
