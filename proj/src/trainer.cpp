#include "caql/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "caql/errors.hpp"
#include "caql/optim.hpp"

namespace caql {

const char* method_name(Method m) {
  switch (m) {
    case Method::Magrpp: return "magrpp";
    case Method::SequentialFt: return "sequential_ft";
    case Method::JointTraining: return "joint_training";
    case Method::NaiveFeatureReplay: return "naive_feature_replay";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  if (name == "magrpp") return Method::Magrpp;
  if (name == "sequential_ft") return Method::SequentialFt;
  if (name == "joint_training") return Method::JointTraining;
  if (name == "naive_feature_replay") return Method::NaiveFeatureReplay;
  throw DomainError("unknown method '" + name + "'");
}

void TrainConfig::validate() const {
  if (replay_batch < 1) throw DomainError("train.b1: must be >= 1");
  if (batch_size < 1) throw DomainError("train.b2: must be >= 1");
  if (memory_quota < 1) throw DomainError("train.memory_M: must be >= 1");
  if (epsilon < 0.0) throw DomainError("train.epsilon: must be >= 0");
  if (lambda_tune < 0.0) throw DomainError("train.lambda_tune: must be >= 0");
  if (lambda_proj < 0.0) throw DomainError("train.lambda_proj: must be >= 0");
  if (lambda_reg < 0.0) throw DomainError("train.lambda_reg: must be >= 0");
  if (max_epochs < 1) throw DomainError("train.max_epochs: must be >= 1");
  if (!(lr > 0.0)) throw DomainError("train.lr: must be > 0");
  if (!(base_lr > 0.0)) throw DomainError("train.base_lr: must be > 0");
  if (weight_decay < 0.0) throw DomainError("train.weight_decay: must be >= 0");
  if (model.backbone_widths.size() < 2)
    throw DomainError("train.backbone_widths: need at least 2 layers");
  if (!task_order.empty()) {
    std::vector<std::size_t> sorted = task_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i)
        throw DomainError("train.task_order: not a permutation of 0..T-1");
  }
}

double delta_t_diagnostic(const ModelState& before, const ModelState& after) {
  auto collect = [](const ModelState& m) {
    std::vector<const DenseMatrix*> out;
    for (const Mlp* net :
         {&m.backbone.net, &m.regressor.net, &m.projector.net})
      for (const AffineLayer& l : net->layers) {
        out.push_back(&l.weight.value);
        out.push_back(&l.bias.value);
      }
    return out;
  };
  const auto bp = collect(before);
  const auto ap = collect(after);
  if (bp.size() != ap.size())
    throw DimensionError("delta_t: models differ in block count");
  double s = 0.0;
  for (std::size_t k = 0; k < bp.size(); ++k) {
    if (!bp[k]->same_shape(*ap[k]))
      throw DimensionError("delta_t: block " + std::to_string(k) +
                           " differs in shape");
    for (std::size_t i = 0; i < bp[k]->data.size(); ++i) {
      const double d = ap[k]->data[i] - bp[k]->data[i];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

namespace {

constexpr std::uint64_t kRngInit = 1;
constexpr std::uint64_t kRngReplay = 2;
constexpr std::uint64_t kRngShuffle = 3;
constexpr std::uint64_t kRngFwt = 4;
constexpr std::uint64_t kRngProbe = 5;
constexpr std::uint64_t kRngProjector = 6;

constexpr double kEarlyStopRelTol = 1e-4;
constexpr double kEarlyStopAbsTol = 1e-4;

DenseMatrix rows_to_matrix(const std::vector<Sample>& samples) {
  const std::size_t n = samples.size();
  const std::size_t d = samples.empty() ? 0 : samples[0].input.size();
  DenseMatrix m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(samples[i].input.begin(), samples[i].input.end(),
              m.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  return m;
}

// Runs the whole experiment; one instance per (config, stream, seed).
class Runner {
 public:
  Runner(const TrainConfig& cfg, const std::vector<SessionData>& stream,
         double score_low, double score_high)
      : cfg_(cfg),
        low_(score_low),
        high_(score_high),
        master_(cfg.seed),
        replay_rng_(master_.fork(kRngReplay)),
        shuffle_rng_(master_.fork(kRngShuffle)),
        bank_(cfg.memory_quota) {
    if (!(high_ > low_)) throw DomainError("trainer: degenerate score range");
    if (!cfg_.task_order.empty()) {
      if (cfg_.task_order.size() != stream.size())
        throw DomainError("train.task_order: length must equal T");
      for (std::size_t i : cfg_.task_order) stream_.push_back(stream[i]);
    } else {
      stream_ = stream;
    }
    if (cfg_.method != Method::JointTraining && stream_.size() < 2)
      throw DomainError("trainer: continual methods need T >= 2");
    if (stream_.empty() || stream_[0].train.empty())
      throw DomainError("trainer: empty stream");
    d_in_ = stream_[0].train[0].input.size();
  }

  // Finite-difference check of one full magrpp training step at a
  // representative mid-run state. Returns the max relative error.
  double step_gradient_check(unsigned mask = 0xF) {
    Rng init_rng = master_.fork(kRngInit);
    model_ = make_model(d_in_, cfg_.model, init_rng);
    pristine_backbone_ = model_.backbone;

    // A short base phase plus one incremental epoch to reach a state where
    // every loss term is active and the projector is off its zero init.
    current_lr_ = cfg_.base_lr;
    std::vector<std::size_t> order(stream_[0].train.size());
    std::iota(order.begin(), order.end(), 0);
    SessionFlags base;
    for (int epoch = 0; epoch < 3; ++epoch)
      run_epoch(stream_[0], order, base, 1);
    base_backbone_ = model_.backbone;
    bank_.begin_session();
    bank_.append_prototypes(ous_select(stream_[0], model_, cfg_.memory_quota,
                                       cfg_.ous_use_predictions));

    snapshot_prev_backbone(model_);
    reset_projector(1);
    SessionFlags f;
    f.replay = f.translate = (mask & 8u) != 0;
    f.tune = (mask & 1u) != 0;
    f.proj = (mask & 2u) != 0;
    f.reg = (mask & 4u) != 0 && f.replay;
    f.snapshot = true;
    const std::size_t l_opt = model_.backbone.layer_count();
    current_lr_ = cfg_.lr;
    std::vector<std::size_t> order1(stream_[1].train.size());
    std::iota(order1.begin(), order1.end(), 0);
    run_epoch(stream_[1], order1, f, l_opt);

    std::vector<Sample> batch(stream_[1].train.begin(),
                              stream_[1].train.begin() +
                                  std::min<std::size_t>(
                                      cfg_.batch_size,
                                      stream_[1].train.size()));
    Rng mem_rng = master_.fork(kRngReplay);
    const std::vector<MemoryEntry> mem =
        bank_.sample_batch(cfg_.replay_batch, mem_rng);

    auto params = trainable_params(f);
    for (ParamBlock* p : params) p->zero_grad();
    accumulate_gradients(batch, f, l_opt, mem);
    // The projector loss treats the live features as detached targets, so
    // the probe must hold them fixed at the base point.
    const DenseMatrix frozen_targets =
        model_.backbone.features(rows_to_matrix(batch));
    auto loss_fn = [&]() {
      return evaluate_objective(batch, f, l_opt, mem, &frozen_targets);
    };
    return finite_diff_check(loss_fn, params, 1e-6);
  }

  ExperimentResult run() {
    ExperimentResult result;
    const std::size_t t_count = stream_.size();
    result.session_count = t_count;
    result.perf = PerfMatrix(t_count);
    result.forward_band.assign(t_count, std::nullopt);
    result.fwt_baselines = fwt_baselines();

    Rng init_rng = master_.fork(kRngInit);
    model_ = make_model(d_in_, cfg_.model, init_rng);
    check_projector_identity();
    pristine_backbone_ = model_.backbone;

    if (cfg_.method == Method::JointTraining) {
      run_joint(result);
    } else {
      for (std::size_t t = 0; t < t_count; ++t) {
        bank_.begin_session();
        result.sessions.push_back(run_session(t, result));
        if (t == 0) base_backbone_ = model_.backbone;
        const SessionResult& r = result.sessions.back();
        for (std::size_t j = 0; j <= t; ++j)
          result.perf.set(t, j, r.test_srcc[j]);
        if (t + 1 < t_count)
          result.forward_band[t + 1] = srcc_on(stream_[t + 1].test);
        result.delta_series.push_back(r.delta_t);
      }
    }

    finalize_metrics(result);
    result.bank = bank_;
    result.final_model = model_;
    return result;
  }

 private:
  // --- evaluation ------------------------------------------------------

  double norm_score(double y) const { return (y - low_) / (high_ - low_); }
  double denorm_score(double p) const { return low_ + p * (high_ - low_); }

  std::vector<double> predict(const std::vector<Sample>& samples) const {
    const DenseMatrix h = model_.backbone.features(rows_to_matrix(samples));
    const DenseMatrix p = model_.regressor.predict(h);
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = denorm_score(p(i, 0));
    return out;
  }

  // A collapsed model that predicts one constant carries zero rank
  // information; score it 0 instead of failing the whole run. Constant
  // targets still propagate (the task itself is degenerate).
  static double safe_srcc(const std::vector<double>& preds,
                          const std::vector<double>& targets) {
    bool const_pred = true;
    for (double p : preds)
      if (p != preds[0]) {
        const_pred = false;
        break;
      }
    if (const_pred) {
      bool const_target = true;
      for (double t : targets)
        if (t != targets[0]) {
          const_target = false;
          break;
        }
      if (!const_target) return 0.0;
    }
    return srcc(preds, targets);
  }

  double srcc_on(const std::vector<Sample>& test) const {
    std::vector<double> targets(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) targets[i] = test[i].score;
    return safe_srcc(predict(test), targets);
  }

  std::vector<double> fwt_baselines() {
    std::vector<double> out(stream_.size(), 0.0);
    Rng base = master_.fork(kRngFwt);
    for (std::size_t t = 0; t < stream_.size(); ++t) {
      Rng r = base.fork(t);
      ModelState fresh = make_model(d_in_, cfg_.model, r);
      const DenseMatrix h =
          fresh.backbone.features(rows_to_matrix(stream_[t].test));
      const DenseMatrix p = fresh.regressor.predict(h);
      std::vector<double> preds(stream_[t].test.size());
      std::vector<double> targets(stream_[t].test.size());
      for (std::size_t i = 0; i < preds.size(); ++i) {
        preds[i] = denorm_score(p(i, 0));
        targets[i] = stream_[t].test[i].score;
      }
      out[t] = safe_srcc(preds, targets);
    }
    return out;
  }

  void check_projector_identity() {
    Rng probe_rng = master_.fork(kRngProbe);
    DenseMatrix probe(4, cfg_.model.feature_dim());
    for (double& v : probe.data) v = probe_rng.uniform(-2.0, 2.0);
    const DenseMatrix projected = model_.projector.project(probe);
    if (max_abs_diff(projected, probe) != 0.0)
      throw StateError("trainer: projector is not the identity at init");
  }

  // --- training --------------------------------------------------------

  struct SessionFlags {
    bool replay{false};
    bool translate{false};  // pass replayed features through the projector
    bool tune{false};
    bool proj{false};
    bool reg{false};
    bool snapshot{false};
    bool profile{false};
    bool bank{false};     // OUS prototypes at session end
    bool refresh{false};  // projector refresh at session end

    bool trains_projector() const { return proj || translate; }
  };

  SessionFlags session_flags(std::size_t t) const {
    SessionFlags f;
    const bool first = t == 0;
    switch (cfg_.method) {
      case Method::SequentialFt:
        break;
      case Method::NaiveFeatureReplay:
        f.replay = !first;
        f.bank = true;
        break;
      case Method::Magrpp:
        f.replay = !first;
        f.translate = !first;
        f.tune = !first && cfg_.lambda_tune > 0.0;
        f.proj = !first && cfg_.lambda_proj > 0.0 && !cfg_.freeze_projector;
        f.reg = !first && cfg_.lambda_reg > 0.0;
        f.snapshot = f.tune || f.proj;
        f.profile = !first;
        f.bank = true;
        f.refresh = !first && !cfg_.freeze_projector;
        break;
      case Method::JointTraining:
        break;
    }
    return f;
  }

  // The boundary compares the pre-training backbone (the pretrained
  // reference at this scale) against the current tuned one on base-session
  // data: layers whose abstraction the tuning improved are free to adapt.
  std::size_t boundary_for_session(std::size_t t) {
    if (cfg_.freeze_layer_selection && frozen_l_opt_)
      return *frozen_l_opt_;
    const LayerAbstractionProfile profile =
        profile_layers(stream_[0], pristine_backbone_, model_.backbone,
                       cfg_.epsilon, cfg_.layersel_bins);
    profiles_.push_back(profile);
    if (t >= 1 && !frozen_l_opt_) frozen_l_opt_ = profile.l_opt;
    return profile.l_opt;
  }

  // One epoch over `order`ed train indices; returns epoch-mean parts.
  ObjectiveParts run_epoch(const SessionData& session,
                           const std::vector<std::size_t>& order,
                           const SessionFlags& f, std::size_t l_opt) {
    ObjectiveParts sums;
    std::size_t batches = 0;
    const std::size_t n = order.size();
    for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
      const std::size_t b = std::min(cfg_.batch_size, n - start);
      std::vector<Sample> batch;
      batch.reserve(b);
      for (std::size_t i = 0; i < b; ++i)
        batch.push_back(session.train[order[start + i]]);
      const ObjectiveParts parts = train_step(batch, f, l_opt);
      sums.loss_d += parts.loss_d;
      sums.loss_m += parts.loss_m;
      sums.loss_tune += parts.loss_tune;
      sums.loss_proj += parts.loss_proj;
      sums.loss_reg += parts.loss_reg;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    sums.loss_d *= inv;
    sums.loss_m *= inv;
    sums.loss_tune *= inv;
    sums.loss_proj *= inv;
    sums.loss_reg *= inv;
    return sums;
  }

  struct StepCaches {
    Mlp::Cache backbone;
    Mlp::Cache regressor;
    Mlp::Cache regressor_mem;
    Mlp::Cache proj_cur;
    Mlp::Cache proj_mem;
    std::vector<DenseMatrix> taps;
    std::vector<DenseMatrix> frozen_taps;
    DenseMatrix targets;
    DenseMatrix mem_targets;
    DenseMatrix translated;
    ScalarLoss ld, lm, proj;
    TuneLoss tune;
    RegLoss reg;
    double tune_scale{1.0};
    double proj_scale{1.0};
  };

  // Forward pass and every loss term for one step. With `caches` null this
  // is a pure evaluation (used by the finite-difference harness).
  ObjectiveParts compute_parts(const std::vector<Sample>& batch,
                               const SessionFlags& f, std::size_t l_opt,
                               const std::vector<MemoryEntry>& mem,
                               StepCaches* c,
                               const DenseMatrix* detached_proj_targets =
                                   nullptr) const {
    StepCaches local;
    StepCaches& sc = c ? *c : local;
    const std::size_t b = batch.size();
    const DenseMatrix x = rows_to_matrix(batch);
    sc.targets = DenseMatrix(b, 1);
    for (std::size_t i = 0; i < b; ++i)
      sc.targets(i, 0) = norm_score(batch[i].score);

    sc.taps = model_.backbone.forward_taps(x, c ? &sc.backbone : nullptr);
    const DenseMatrix& features = sc.taps.back();
    const DenseMatrix pred =
        model_.regressor.net.forward(features, c ? &sc.regressor : nullptr);

    ObjectiveParts parts;
    sc.ld = loss_regression(pred, sc.targets);
    parts.loss_d = sc.ld.value;

    if (f.snapshot)
      sc.frozen_taps = model_.frozen_prev_backbone->forward_taps(x, nullptr);

    // Feature-space losses enter the objective in mean form (per summed
    // feature dimension) so every term is O(1) and the unit weights are
    // meaningful.
    if (f.tune) {
      sc.tune = loss_tune(sc.taps, sc.frozen_taps, l_opt, cfg_.tune_mode);
      std::size_t tune_dims = 0;
      for (const auto& g : sc.tune.tap_grads)
        if (g.size() > 0) tune_dims += g.cols;
      sc.tune_scale =
          tune_dims > 0 ? 1.0 / static_cast<double>(tune_dims) : 1.0;
      sc.tune.value *= sc.tune_scale;
      parts.loss_tune = sc.tune.value;
    }

    sc.proj_scale = 1.0 / static_cast<double>(features.cols);
    if (f.proj) {
      const DenseMatrix predicted = model_.projector.project(
          sc.frozen_taps.back(), c ? &sc.proj_cur : nullptr);
      const DenseMatrix& actual =
          detached_proj_targets ? *detached_proj_targets : features;
      sc.proj = loss_proj(actual, predicted);  // targets detached
      sc.proj.value *= sc.proj_scale;
      parts.loss_proj = sc.proj.value;
    }

    // Replay: stale features go through the current projector per batch
    // (magrpp) or verbatim (naive); the bank is untouched until refresh.
    if (f.replay && !mem.empty()) {
      const std::size_t b1 = mem.size();
      DenseMatrix stale(b1, mem[0].feature.size());
      sc.mem_targets = DenseMatrix(b1, 1);
      for (std::size_t i = 0; i < b1; ++i) {
        std::copy(mem[i].feature.begin(), mem[i].feature.end(),
                  stale.data.begin() +
                      static_cast<std::ptrdiff_t>(i * stale.cols));
        sc.mem_targets(i, 0) = norm_score(mem[i].score);
      }
      sc.translated =
          f.translate
              ? model_.projector.project(stale, c ? &sc.proj_mem : nullptr)
              : stale;
      const DenseMatrix mem_pred = model_.regressor.net.forward(
          sc.translated, c ? &sc.regressor_mem : nullptr);
      sc.lm = loss_regression(mem_pred, sc.mem_targets);
      parts.loss_m = sc.lm.value;

      if (f.reg) {
        DenseMatrix joint(b1 + b, features.cols);
        std::copy(sc.translated.data.begin(), sc.translated.data.end(),
                  joint.data.begin());
        std::copy(features.data.begin(), features.data.end(),
                  joint.data.begin() +
                      static_cast<std::ptrdiff_t>(b1 * features.cols));
        std::vector<double> joint_scores(b1 + b);
        for (std::size_t i = 0; i < b1; ++i) joint_scores[i] = mem[i].score;
        for (std::size_t i = 0; i < b; ++i)
          joint_scores[b1 + i] = batch[i].score;
        const DenseMatrix sd = score_distance_matrix(joint_scores, low_, high_);
        sc.reg = loss_reg(joint, sd, {b1, b});
        parts.loss_reg = sc.reg.value;
      }
    }
    return parts;
  }

  double evaluate_objective(const std::vector<Sample>& batch,
                            const SessionFlags& f, std::size_t l_opt,
                            const std::vector<MemoryEntry>& mem,
                            const DenseMatrix* detached_proj_targets =
                                nullptr) const {
    return total_objective(
        compute_parts(batch, f, l_opt, mem, nullptr, detached_proj_targets),
        {cfg_.lambda_tune, cfg_.lambda_proj, cfg_.lambda_reg});
  }

  // Backward for one step; grads accumulate into the param blocks.
  ObjectiveParts accumulate_gradients(const std::vector<Sample>& batch,
                                      const SessionFlags& f, std::size_t l_opt,
                                      const std::vector<MemoryEntry>& mem) {
    StepCaches sc;
    const ObjectiveParts parts = compute_parts(batch, f, l_opt, mem, &sc);
    const double total = total_objective(
        parts, {cfg_.lambda_tune, cfg_.lambda_proj, cfg_.lambda_reg});
    (void)total;  // finite or total_objective throws

    const std::size_t b = batch.size();
    const std::size_t b1 = f.replay ? mem.size() : 0;
    const std::size_t feat_cols = sc.taps.back().cols;

    DenseMatrix feature_grad =
        model_.regressor.net.backward(sc.ld.grad, sc.regressor);

    DenseMatrix mem_feature_grad;
    if (b1 > 0)
      mem_feature_grad =
          model_.regressor.net.backward(sc.lm.grad, sc.regressor_mem);

    if (f.reg && b1 > 0) {
      for (std::size_t i = 0; i < b1; ++i)
        for (std::size_t k = 0; k < feat_cols; ++k)
          mem_feature_grad(i, k) += cfg_.lambda_reg * sc.reg.feature_grad(i, k);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < feat_cols; ++k)
          feature_grad(i, k) +=
              cfg_.lambda_reg * sc.reg.feature_grad(b1 + i, k);
    }

    if (b1 > 0 && f.translate && !cfg_.freeze_projector)
      model_.projector.backward(mem_feature_grad, sc.proj_mem);

    if (f.proj) {
      DenseMatrix up = sc.proj.grad;
      for (double& v : up.data) v *= cfg_.lambda_proj * sc.proj_scale;
      model_.projector.backward(up, sc.proj_cur);
    }

    std::vector<DenseMatrix> tap_grads;
    if (f.tune) {
      tap_grads = std::move(sc.tune.tap_grads);
      for (auto& g : tap_grads)
        for (double& v : g.data) v *= cfg_.lambda_tune * sc.tune_scale;
    }
    model_.backbone.net.backward(feature_grad, tap_grads, sc.backbone);
    return parts;
  }

  ObjectiveParts train_step(const std::vector<Sample>& batch,
                            const SessionFlags& f, std::size_t l_opt) {
    std::vector<MemoryEntry> mem;
    if (f.replay && !bank_.empty())
      mem = bank_.sample_batch(cfg_.replay_batch, replay_rng_);
    const ObjectiveParts parts = accumulate_gradients(batch, f, l_opt, mem);
    adam_step(trainable_params(f), current_lr_, cfg_.weight_decay);
    return parts;
  }

  void reset_projector(std::size_t t) {
    Rng r = master_.fork(kRngProjector).fork(t);
    model_.projector.net.init(r);
    for (auto& layer : model_.projector.net.layers) {
      for (ParamBlock* block : {&layer.weight, &layer.bias}) {
        std::fill(block->m1.data.begin(), block->m1.data.end(), 0.0);
        std::fill(block->m2.data.begin(), block->m2.data.end(), 0.0);
        block->step = 0;
        block->zero_grad();
      }
    }
    auto& out_layer = model_.projector.net.layers.back();
    std::fill(out_layer.weight.value.data.begin(),
              out_layer.weight.value.data.end(), 0.0);
    std::fill(out_layer.bias.value.data.begin(),
              out_layer.bias.value.data.end(), 0.0);
  }

  std::vector<ParamBlock*> trainable_params(const SessionFlags& f) {
    std::vector<ParamBlock*> out;
    for (auto* p : model_.backbone.net.params()) out.push_back(p);
    for (auto* p : model_.regressor.net.params()) out.push_back(p);
    if (f.trains_projector() && !cfg_.freeze_projector)
      for (auto* p : model_.projector.net.params()) out.push_back(p);
    return out;
  }

  SessionResult run_session(std::size_t t, ExperimentResult& result) {
    const auto start_time = std::chrono::steady_clock::now();
    const SessionData& session = stream_[t];
    const SessionFlags f = session_flags(t);

    if (f.snapshot) snapshot_prev_backbone(model_);
    std::size_t l_opt = model_.backbone.layer_count();
    if (f.profile) l_opt = boundary_for_session(t);

    // A fresh projector per session: the drift map it has to learn starts
    // at zero when the session opens, so training begins from the exact
    // identity and replay translation is safe before it converges.
    if (f.proj) reset_projector(t);

    const ModelState before = model_;

    SessionResult r;
    r.session = t;
    std::vector<std::size_t> order(session.train.size());
    std::iota(order.begin(), order.end(), 0);

    // The base session plays the role of pretraining/base adaptation; its
    // budget and step size are independent of the incremental ones, and it
    // runs at the offline budget even in online mode.
    current_lr_ = t == 0 ? cfg_.base_lr : cfg_.lr;
    const std::size_t epoch_cap =
        (cfg_.mode == Mode::Online && t > 0) ? 1 : cfg_.max_epochs;
    double prev_total = 0.0;
    std::size_t stall = 0;
    for (std::size_t epoch = 0; epoch < epoch_cap; ++epoch) {
      shuffle_rng_.shuffle(order);
      r.losses = run_epoch(session, order, f, l_opt);
      r.total_loss = total_objective(
          r.losses, {cfg_.lambda_tune, cfg_.lambda_proj, cfg_.lambda_reg});
      r.epochs_run = epoch + 1;
      // Converged means the epoch-mean total stopped moving at the stop
      // tolerance. Two-sided so a transient rise (projector catching up to
      // the moving backbone) keeps the session alive, with an absolute
      // floor so interpolation-plateau jitter cannot postpone the stop.
      if (epoch > 0 && std::abs(prev_total - r.total_loss) <
                           std::max(kEarlyStopRelTol * std::abs(prev_total),
                                    kEarlyStopAbsTol)) {
        if (++stall >= cfg_.patience) break;
      } else {
        stall = 0;
      }
      prev_total = r.total_loss;
      if (std::getenv("CAQL_DEBUG")) {
        double fn = 0.0, pn = 0.0;
        {
          const DenseMatrix x = rows_to_matrix(session.train);
          const DenseMatrix h = model_.backbone.features(x);
          fn = frobenius_norm(h) / std::sqrt(static_cast<double>(h.rows));
          if (model_.frozen_prev_backbone) {
            const DenseMatrix z = model_.frozen_prev_backbone->features(x);
            DenseMatrix ph = model_.projector.project(z);
            add_inplace(ph, h, -1.0);
            pn = frobenius_norm(ph) / std::sqrt(static_cast<double>(h.rows));
          }
        }
        std::fprintf(stderr,
                     "dbg t=%zu ep=%zu LD=%.4f LM=%.4f LT=%.4f LP=%.4f LR=%.4f "
                     "|h|=%.2f |perr|=%.2f\n",
                     t, epoch, r.losses.loss_d, r.losses.loss_m,
                     r.losses.loss_tune, r.losses.loss_proj, r.losses.loss_reg,
                     fn, pn);
      }
    }

    r.delta_t = delta_t_diagnostic(before, model_);

    // End-of-session memory maintenance: refresh through the converged
    // projector first, then add this session's prototypes.
    if (f.refresh) {
      record_deviation(t, result);
      bank_.refresh(model_.projector);
      record_deviation_refreshed(t, result);
    }
    if (f.bank) {
      auto prototypes = ous_select(session, model_, cfg_.memory_quota,
                                   cfg_.ous_use_predictions);
      for (const auto& e : prototypes) {
        const Sample* src = nullptr;
        for (const Sample& s : session.train)
          if (s.id == e.id) src = &s;
        if (src) raw_inputs_[e.id] = src->input;
      }
      bank_.append_prototypes(std::move(prototypes));
    }

    if (model_.frozen_prev_backbone) {
      const DenseMatrix x = rows_to_matrix(session.train);
      const auto cur = model_.backbone.forward_taps(x, nullptr);
      const auto prev = model_.frozen_prev_backbone->forward_taps(x, nullptr);
      r.tune_after = loss_tune(cur, prev, l_opt, cfg_.tune_mode).value;
    }

    for (std::size_t j = 0; j <= t; ++j)
      r.test_srcc.push_back(srcc_on(stream_[j].test));
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      start_time)
            .count();
    return r;
  }

  void run_joint(ExperimentResult& result) {
    SessionData merged;
    merged.session_index = 0;
    for (const auto& s : stream_)
      merged.train.insert(merged.train.end(), s.train.begin(), s.train.end());

    const auto start_time = std::chrono::steady_clock::now();
    SessionResult r;
    r.session = stream_.size() - 1;
    const ModelState before = model_;
    std::vector<std::size_t> order(merged.train.size());
    std::iota(order.begin(), order.end(), 0);
    // Budget parity with a sequential run: base budget plus one per-session
    // incremental budget for each later session.
    const std::size_t per_session =
        cfg_.mode == Mode::Online ? 1 : cfg_.max_epochs;
    const std::size_t epoch_cap =
        cfg_.max_epochs + per_session * (stream_.size() - 1);
    current_lr_ = cfg_.base_lr;
    SessionFlags f;  // regression loss only
    double prev_total = 0.0;
    std::size_t stall = 0;
    for (std::size_t epoch = 0; epoch < epoch_cap; ++epoch) {
      shuffle_rng_.shuffle(order);
      r.losses = run_epoch(merged, order, f, cfg_.model.backbone_widths.size());
      r.total_loss = r.losses.loss_d;
      r.epochs_run = epoch + 1;
      // Converged means the epoch-mean total stopped moving at the stop
      // tolerance. Two-sided so a transient rise (projector catching up to
      // the moving backbone) keeps the session alive, with an absolute
      // floor so interpolation-plateau jitter cannot postpone the stop.
      if (epoch > 0 && std::abs(prev_total - r.total_loss) <
                           std::max(kEarlyStopRelTol * std::abs(prev_total),
                                    kEarlyStopAbsTol)) {
        if (++stall >= cfg_.patience) break;
      } else {
        stall = 0;
      }
      prev_total = r.total_loss;
    }
    r.delta_t = delta_t_diagnostic(before, model_);
    const std::size_t last = stream_.size() - 1;
    for (std::size_t j = 0; j <= last; ++j) {
      const double rho = srcc_on(stream_[j].test);
      result.perf.set(last, j, rho);
      r.test_srcc.push_back(rho);
    }
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      start_time)
            .count();
    result.sessions.push_back(std::move(r));
    result.delta_series.push_back(result.sessions.back().delta_t);
  }

  // Deviation of stored old features from what the current backbone would
  // produce for the same raw inputs (diagnostic only; training never sees
  // the retained raw inputs).
  void record_deviation(std::size_t t, ExperimentResult& result) {
    (void)t;
    const auto pair = bank_vs_oracle();
    if (!pair) return;
    stale_sq_ += pair->first;
    stale_count_ += pair->second;
    if (stale_count_ > 0)
      result.metrics.deviation_stale_mse =
          stale_sq_ / static_cast<double>(stale_count_);
  }

  void record_deviation_refreshed(std::size_t t, ExperimentResult& result) {
    (void)t;
    const auto pair = bank_vs_oracle();
    if (!pair) return;
    refreshed_sq_ += pair->first;
    refreshed_count_ += pair->second;
    if (refreshed_count_ > 0)
      result.metrics.deviation_refreshed_mse =
          refreshed_sq_ / static_cast<double>(refreshed_count_);
  }

  std::optional<std::pair<double, std::size_t>> bank_vs_oracle() const {
    if (bank_.empty()) return std::nullopt;
    double sq = 0.0;
    std::size_t count = 0;
    for (const MemoryEntry& e : bank_.entries()) {
      const auto it = raw_inputs_.find(e.id);
      if (it == raw_inputs_.end()) continue;
      DenseMatrix x(1, it->second.size());
      std::copy(it->second.begin(), it->second.end(), x.data.begin());
      const DenseMatrix fresh = model_.backbone.features(x);
      for (std::size_t k = 0; k < e.feature.size(); ++k) {
        const double d = e.feature[k] - fresh(0, k);
        sq += d * d;
      }
      count += e.feature.size();
    }
    if (count == 0) return std::nullopt;
    return std::make_pair(sq, count);
  }

  void finalize_metrics(ExperimentResult& result) {
    std::vector<double> pooled_pred;
    std::vector<double> pooled_target;
    for (const auto& s : stream_) {
      const auto preds = predict(s.test);
      pooled_pred.insert(pooled_pred.end(), preds.begin(), preds.end());
      for (const Sample& sample : s.test)
        pooled_target.push_back(sample.score);
    }
    result.metrics.rho_avg = safe_srcc(pooled_pred, pooled_target);
    result.metrics.rmse_value = rmse(pooled_pred, pooled_target, low_, high_);
    result.metrics.per_session_srcc = result.sessions.back().test_srcc;

    if (cfg_.method != Method::JointTraining) {
      result.metrics.rho_aft = rho_aft(result.perf);
      result.metrics.rho_fwt =
          rho_fwt(result.forward_band, result.fwt_baselines);

      // Diagnostic: does the parameter step size track forgetting?
      std::vector<double> deltas, forgetting;
      for (std::size_t t = 1; t < result.session_count; ++t) {
        double drop = 0.0;
        std::size_t count = 0;
        for (std::size_t j = 0; j < t; ++j) {
          const auto prev = result.perf.at(t - 1, j);
          const auto cur = result.perf.at(t, j);
          if (prev && cur) {
            drop += *prev - *cur;
            ++count;
          }
        }
        if (count > 0) {
          deltas.push_back(result.delta_series[t]);
          forgetting.push_back(drop / static_cast<double>(count));
        }
      }
      if (deltas.size() >= 2) {
        try {
          result.delta_forgetting_corr = pearson(deltas, forgetting);
        } catch (const UndefinedCorrelationError&) {
        }
      }
    }
    result.profiles = profiles_;
  }

  TrainConfig cfg_;
  std::vector<SessionData> stream_;
  double low_, high_;
  Rng master_;
  Rng replay_rng_;
  Rng shuffle_rng_;
  std::size_t d_in_{0};
  ModelState model_;
  Backbone pristine_backbone_;
  Backbone base_backbone_;
  MemoryBank bank_;
  double current_lr_{1e-3};
  std::vector<LayerAbstractionProfile> profiles_;
  std::optional<std::size_t> frozen_l_opt_;
  std::map<std::string, std::vector<double>> raw_inputs_;
  double stale_sq_{0.0};
  double refreshed_sq_{0.0};
  std::size_t stale_count_{0};
  std::size_t refreshed_count_{0};
};

}  // namespace

double trainer_step_gradient_check(std::uint64_t seed) {
  StreamConfig scfg;
  scfg.grade_count = 3;
  scfg.session_count = 3;
  scfg.samples_per_session = 8;
  scfg.input_dim = 6;
  scfg.test_per_session = 4;
  scfg.seed = seed;
  const auto stream = generate_synthetic_stream(scfg);
  TrainConfig cfg;
  cfg.model.backbone_widths = {8, 6};
  cfg.model.regressor_hidden = 4;
  cfg.model.projector_hidden = 6;
  cfg.replay_batch = 3;
  cfg.batch_size = 3;
  cfg.memory_quota = 4;
  cfg.seed = seed;
  Runner runner(cfg, stream, scfg.score_low, scfg.score_high);
  return runner.step_gradient_check();
}

double trainer_step_gradient_check_masked(std::uint64_t seed, unsigned mask) {
  StreamConfig scfg;
  scfg.grade_count = 3;
  scfg.session_count = 3;
  scfg.samples_per_session = 8;
  scfg.input_dim = 6;
  scfg.test_per_session = 4;
  scfg.seed = seed;
  const auto stream = generate_synthetic_stream(scfg);
  TrainConfig cfg;
  cfg.model.backbone_widths = {8, 6};
  cfg.model.regressor_hidden = 4;
  cfg.model.projector_hidden = 6;
  cfg.replay_batch = 3;
  cfg.batch_size = 3;
  cfg.memory_quota = 4;
  cfg.seed = seed;
  Runner runner(cfg, stream, scfg.score_low, scfg.score_high);
  return runner.step_gradient_check(mask);
}

ExperimentResult run_experiment(const TrainConfig& cfg,
                                const std::vector<SessionData>& stream,
                                double score_low, double score_high) {
  cfg.validate();
  Runner runner(cfg, stream, score_low, score_high);
  return runner.run();
}

namespace {

using nlohmann::json;

json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace

std::string experiment_report_json(const ExperimentResult& result,
                                   const std::string& config_echo_json,
                                   const std::string& method,
                                   std::uint64_t seed) {
  json j;
  j["caql_report_version"] = 1;
  j["method"] = method;
  j["seed"] = seed;
  j["config"] = json::parse(config_echo_json);

  json perf = json::array();
  for (std::size_t i = 0; i < result.session_count; ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < result.session_count; ++k)
      row.push_back(opt_to_json(result.perf.at(i, k)));
    perf.push_back(row);
  }
  j["perf_matrix"] = perf;

  json band = json::array();
  for (const auto& v : result.forward_band) band.push_back(opt_to_json(v));
  j["forward_band"] = band;
  j["fwt_baselines"] = result.fwt_baselines;

  j["metrics"] = {
      {"rho_avg", opt_to_json(result.metrics.rho_avg)},
      {"rho_aft", opt_to_json(result.metrics.rho_aft)},
      {"rho_fwt", opt_to_json(result.metrics.rho_fwt)},
      {"rmse", opt_to_json(result.metrics.rmse_value)},
      {"per_session_srcc", result.metrics.per_session_srcc},
      {"deviation_stale_mse",
       opt_to_json(result.metrics.deviation_stale_mse)},
      {"deviation_refreshed_mse",
       opt_to_json(result.metrics.deviation_refreshed_mse)},
  };

  json sessions = json::array();
  for (const auto& s : result.sessions) {
    sessions.push_back(json{{"session", s.session},
                            {"loss_d", s.losses.loss_d},
                            {"loss_m", s.losses.loss_m},
                            {"loss_tune", s.losses.loss_tune},
                            {"loss_proj", s.losses.loss_proj},
                            {"loss_reg", s.losses.loss_reg},
                            {"total_loss", s.total_loss},
                            {"tune_after", s.tune_after},
                            {"delta_t", s.delta_t},
                            {"epochs_run", s.epochs_run},
                            {"test_srcc", s.test_srcc}});
  }
  j["sessions"] = sessions;

  json profiles = json::array();
  for (const auto& p : result.profiles) {
    profiles.push_back(json{{"c_fix", p.c_fix},
                            {"c_tune", p.c_tune},
                            {"ratio", p.ratio},
                            {"degenerate", p.degenerate},
                            {"l_opt", p.l_opt},
                            {"epsilon", p.epsilon}});
  }
  j["layer_profiles"] = profiles;
  j["delta_series"] = result.delta_series;
  j["delta_forgetting_corr"] = opt_to_json(result.delta_forgetting_corr);
  return j.dump(2) + "\n";
}

}  // namespace caql
