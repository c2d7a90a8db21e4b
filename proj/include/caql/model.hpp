#pragma once

#include <optional>
#include <string>
#include <vector>

#include "caql/nn.hpp"

namespace caql {

struct ModelConfig {
  // Hidden widths then feature width; layer count L = widths.size().
  std::vector<std::size_t> backbone_widths{64, 64, 64, 32};
  std::size_t regressor_hidden{16};
  std::size_t projector_hidden{32};

  std::size_t feature_dim() const { return backbone_widths.back(); }
};

// Feature extractor f. Relu on hidden layers, linear feature output; every
// layer's post-activation tap is exposed.
struct Backbone {
  Mlp net;
  std::size_t layer_count() const { return net.layers.size(); }
  std::vector<DenseMatrix> forward_taps(const DenseMatrix& x,
                                        Mlp::Cache* cache = nullptr) const {
    return net.forward_taps(x, cache);
  }
  DenseMatrix features(const DenseMatrix& x) const {
    return net.forward(x, nullptr);
  }
};

// Score head g: feature batch -> one scalar per row.
struct Regressor {
  Mlp net;
  DenseMatrix predict(const DenseMatrix& h) const { return net.forward(h, nullptr); }
};

// Residual feature translator: project(z) = z + p(z) with p a two-layer MLP
// whose final layer starts at exact zero, so the map starts as identity.
struct ManifoldProjector {
  Mlp net;

  DenseMatrix project(const DenseMatrix& z, Mlp::Cache* cache = nullptr) const;

  // Backward through the residual map: returns grad w.r.t. z (identity path
  // included) and accumulates parameter grads.
  DenseMatrix backward(const DenseMatrix& upstream, const Mlp::Cache& cache);
};

struct ModelState {
  Backbone backbone;
  Regressor regressor;
  ManifoldProjector projector;
  std::optional<Backbone> frozen_prev_backbone;

  std::vector<ParamBlock*> trainable_params();
};

// Fresh model, Glorot-init from `rng`; projector output layer zeroed so
// project() is exactly the identity before any training step.
ModelState make_model(std::size_t d_in, const ModelConfig& cfg, Rng& rng);

// Deep-copies the current backbone into the frozen slot.
void snapshot_prev_backbone(ModelState& state);

// Versioned JSON checkpoint, exact round-trip.
std::string save_checkpoint_json(const ModelState& state);
ModelState load_checkpoint_json(const std::string& text);

}  // namespace caql
