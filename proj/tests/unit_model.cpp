#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "caql/errors.hpp"
#include "caql/losses.hpp"
#include "caql/model.hpp"
#include "caql/optim.hpp"
#include "caql/stream.hpp"

using namespace caql;

namespace {

ModelState tiny_model(std::uint64_t seed = 3, std::size_t d_in = 6) {
  ModelConfig cfg;
  cfg.backbone_widths = {8, 8, 4};
  cfg.regressor_hidden = 4;
  cfg.projector_hidden = 4;
  Rng rng(seed);
  return make_model(d_in, cfg, rng);
}

DenseMatrix random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix x(n, d);
  for (double& v : x.data) v = rng.uniform(-1.5, 1.5);
  return x;
}

}  // namespace

TEST_CASE("backbone taps have per-layer shapes and deterministic rows") {
  ModelState m = tiny_model();
  const DenseMatrix x = random_batch(5, 6, 10);
  const auto taps = m.backbone.forward_taps(x);
  REQUIRE(taps.size() == 3);
  CHECK(taps[0].rows == 5);
  CHECK(taps[0].cols == 8);
  CHECK(taps[1].cols == 8);
  CHECK(taps[2].cols == 4);

  // duplicate input rows produce duplicate tap rows
  DenseMatrix twin(2, 6);
  for (std::size_t k = 0; k < 6; ++k) twin(0, k) = twin(1, k) = x(0, k);
  for (const DenseMatrix& tap : m.backbone.forward_taps(twin))
    for (std::size_t k = 0; k < tap.cols; ++k)
      CHECK(tap(0, k) == tap(1, k));
}

TEST_CASE("zero input with zero biases gives zero taps") {
  ModelState m = tiny_model();
  const auto taps = m.backbone.forward_taps(DenseMatrix(3, 6));
  for (const auto& tap : taps)
    for (double v : tap.data) CHECK(v == 0.0);
}

TEST_CASE("snapshot stays frozen while training continues") {
  ModelState m = tiny_model();
  snapshot_prev_backbone(m);
  const std::string before = save_checkpoint_json(m);

  // 100 optimizer steps on the live backbone
  const DenseMatrix x = random_batch(4, 6, 11);
  DenseMatrix target(4, 1);
  for (std::size_t i = 0; i < 4; ++i) target(i, 0) = 0.3 * (double)i;
  for (int step = 0; step < 100; ++step) {
    Mlp::Cache bc, rc;
    const auto taps = m.backbone.forward_taps(x, &bc);
    const DenseMatrix pred = m.regressor.net.forward(taps.back(), &rc);
    const ScalarLoss l = loss_regression(pred, target);
    const DenseMatrix gh = m.regressor.net.backward(l.grad, rc);
    m.backbone.net.backward(gh, bc);
    std::vector<ParamBlock*> params;
    for (auto* p : m.backbone.net.params()) params.push_back(p);
    for (auto* p : m.regressor.net.params()) params.push_back(p);
    adam_step(params, 1e-2, 0.0);
  }

  // live backbone moved, frozen copy did not
  ModelState reference = load_checkpoint_json(before);
  bool live_moved = false;
  for (std::size_t l = 0; l < m.backbone.net.layers.size(); ++l)
    if (max_abs_diff(m.backbone.net.layers[l].weight.value,
                     reference.backbone.net.layers[l].weight.value) > 0)
      live_moved = true;
  CHECK(live_moved);
  REQUIRE(m.frozen_prev_backbone.has_value());
  for (std::size_t l = 0; l < m.frozen_prev_backbone->net.layers.size(); ++l) {
    CHECK(max_abs_diff(
              m.frozen_prev_backbone->net.layers[l].weight.value,
              reference.frozen_prev_backbone->net.layers[l].weight.value) ==
          0.0);
  }

  // frozen forward equals the pre-training forward
  const DenseMatrix frozen_out = m.frozen_prev_backbone->features(x);
  const DenseMatrix ref_out = reference.backbone.features(x);
  CHECK(max_abs_diff(frozen_out, ref_out) == 0.0);
}

TEST_CASE("projector is the exact identity at init") {
  ModelState m = tiny_model(7);
  const DenseMatrix z = random_batch(6, 4, 12);
  const DenseMatrix out = m.projector.project(z);
  CHECK(max_abs_diff(out, z) == 0.0);
}

TEST_CASE("projector zero input with zero biases maps to zero") {
  ModelState m = tiny_model();
  const DenseMatrix out = m.projector.project(DenseMatrix(2, 4));
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("projector dimension mismatch") {
  ModelState m = tiny_model();
  CHECK_THROWS_AS(m.projector.project(DenseMatrix(2, 7)), DimensionError);
}

TEST_CASE("projector gradient includes the identity path") {
  ModelState m = tiny_model(5);
  // move the output layer off zero so the MLP path is active
  Rng rng(21);
  for (double& v : m.projector.net.layers.back().weight.value.data)
    v = rng.uniform(-0.4, 0.4);

  // loss = ||project(z)||^2 as a function of z
  ParamBlock z("z", 3, 4);
  for (double& v : z.value.data) v = rng.uniform(-1, 1);

  auto loss_value = [&]() {
    const DenseMatrix out = m.projector.project(z.value);
    double s = 0;
    for (double v : out.data) s += v * v;
    return s;
  };
  Mlp::Cache cache;
  const DenseMatrix out = m.projector.project(z.value, &cache);
  DenseMatrix up(out.rows, out.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    up.data[i] = 2.0 * out.data[i];
  z.grad = m.projector.backward(up, cache);
  // parameter grads accumulated above are irrelevant here; zero them
  for (auto* p : m.projector.net.params()) p->zero_grad();
  CHECK(finite_diff_check(loss_value, {&z}, 1e-6) < 1e-5);
}

TEST_CASE("regressor with zero weights predicts the bias") {
  ModelState m = tiny_model();
  for (auto& layer : m.regressor.net.layers) {
    std::fill(layer.weight.value.data.begin(), layer.weight.value.data.end(),
              0.0);
    std::fill(layer.bias.value.data.begin(), layer.bias.value.data.end(), 0.0);
  }
  m.regressor.net.layers.back().bias.value(0, 0) = 0.75;
  const DenseMatrix pred = m.regressor.predict(random_batch(4, 4, 13));
  REQUIRE(pred.rows == 4);
  REQUIRE(pred.cols == 1);
  for (double v : pred.data) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("joint training on an easy stream fits well") {
  StreamConfig scfg;
  scfg.grade_count = 3;
  scfg.session_count = 3;
  scfg.samples_per_session = 16;
  scfg.input_dim = 8;
  scfg.test_per_session = 4;
  scfg.shift_strength = 0.0;
  scfg.seed = 9;
  const auto stream = generate_synthetic_stream(scfg);

  ModelConfig mcfg;
  mcfg.backbone_widths = {16, 8};
  mcfg.regressor_hidden = 8;
  mcfg.projector_hidden = 8;
  Rng rng(3);
  ModelState m = make_model(8, mcfg, rng);

  std::vector<Sample> all;
  for (const auto& s : stream)
    all.insert(all.end(), s.train.begin(), s.train.end());
  DenseMatrix x(all.size(), 8);
  DenseMatrix y(all.size(), 1);
  double mean = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::copy(all[i].input.begin(), all[i].input.end(),
              x.data.begin() + static_cast<std::ptrdiff_t>(i * 8));
    y(i, 0) = all[i].score / 100.0;
    mean += y(i, 0);
  }
  mean /= static_cast<double>(all.size());
  double variance = 0;
  for (std::size_t i = 0; i < all.size(); ++i)
    variance += (y(i, 0) - mean) * (y(i, 0) - mean);
  variance /= static_cast<double>(all.size());

  std::vector<ParamBlock*> params;
  for (auto* p : m.backbone.net.params()) params.push_back(p);
  for (auto* p : m.regressor.net.params()) params.push_back(p);
  double train_mse = 0.0;
  for (int step = 0; step < 400; ++step) {
    Mlp::Cache bc, rc;
    const auto taps = m.backbone.forward_taps(x, &bc);
    const DenseMatrix pred = m.regressor.net.forward(taps.back(), &rc);
    const ScalarLoss l = loss_regression(pred, y);
    train_mse = l.value;
    const DenseMatrix gh = m.regressor.net.backward(l.grad, rc);
    m.backbone.net.backward(gh, bc);
    adam_step(params, 5e-3, 0.0);
  }
  CHECK(train_mse < 0.1 * variance);
}

TEST_CASE("checkpoint json round trip is exact") {
  ModelState m = tiny_model(77);
  snapshot_prev_backbone(m);
  // dirty some optimizer state so the round trip covers it
  m.backbone.net.layers[0].weight.m1(0, 0) = 0.123456789123456789;
  m.backbone.net.layers[0].weight.step = 42;

  const std::string text = save_checkpoint_json(m);
  ModelState loaded = load_checkpoint_json(text);
  CHECK(save_checkpoint_json(loaded) == text);

  const DenseMatrix x = random_batch(3, 6, 14);
  CHECK(max_abs_diff(m.backbone.features(x), loaded.backbone.features(x)) ==
        0.0);
  CHECK_THROWS_AS(load_checkpoint_json("{\"format\":\"other\"}"), ParseError);
}
