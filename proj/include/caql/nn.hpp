#pragma once

#include <vector>

#include "caql/matrix.hpp"
#include "caql/optim.hpp"
#include "caql/rng.hpp"

namespace caql {

enum class Activation { None, Relu };

// Forward-pass state needed by the matching backward call. Each forward
// gets its own cache, so one layer can serve several passes per step.
struct AffineCache {
  DenseMatrix input;
  DenseMatrix pre;  // pre-activation
  bool valid{false};
};

// One affine map with optional relu: out = act(x W + b).
struct AffineLayer {
  ParamBlock weight;  // d_in x d_out
  ParamBlock bias;    // 1 x d_out
  Activation act{Activation::None};

  AffineLayer() = default;
  AffineLayer(std::string name, std::size_t d_in, std::size_t d_out,
              Activation a)
      : weight(name + ".w", d_in, d_out),
        bias(name + ".b", 1, d_out),
        act(a) {}

  std::size_t d_in() const { return weight.value.rows; }
  std::size_t d_out() const { return weight.value.cols; }

  // `cache` may be null for inference-only passes.
  DenseMatrix forward(const DenseMatrix& x, AffineCache* cache) const;

  // Accumulates into weight/bias grads (additive); returns grad w.r.t. input.
  DenseMatrix backward(const DenseMatrix& upstream, const AffineCache& cache);

  // Glorot-uniform weights from `rng`, zero biases.
  void init(Rng& rng);

  std::vector<ParamBlock*> params() {
    return {&weight, &bias};
  }
};

// Plain layer stack. Taps (post-activation outputs of every layer) are
// exposed for feature-matching losses and layer profiling.
struct Mlp {
  std::vector<AffineLayer> layers;

  struct Cache {
    std::vector<AffineCache> layer_caches;
  };

  // Returns post-activation outputs of all layers; taps[L-1] is the output.
  std::vector<DenseMatrix> forward_taps(const DenseMatrix& x,
                                        Cache* cache) const;

  DenseMatrix forward(const DenseMatrix& x, Cache* cache) const;

  // Backward from the output plus optional extra gradients injected at each
  // layer's post-activation tap (empty matrix = no injection). Returns grad
  // w.r.t. the input.
  DenseMatrix backward(const DenseMatrix& output_grad,
                       const std::vector<DenseMatrix>& tap_grads,
                       const Cache& cache);

  DenseMatrix backward(const DenseMatrix& output_grad, const Cache& cache) {
    return backward(output_grad, {}, cache);
  }

  std::vector<ParamBlock*> params();
  void init(Rng& rng);
  std::size_t d_in() const { return layers.front().d_in(); }
  std::size_t d_out() const { return layers.back().d_out(); }
};

}  // namespace caql
