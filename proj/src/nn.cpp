#include "caql/nn.hpp"

#include <cmath>

#include "caql/errors.hpp"

namespace caql {

DenseMatrix AffineLayer::forward(const DenseMatrix& x,
                                 AffineCache* cache) const {
  if (x.cols != weight.value.rows)
    throw DimensionError("affine_forward: input " + x.shape_str() +
                         " does not match weight " + weight.value.shape_str());
  DenseMatrix pre = matmul(x, weight.value);
  for (std::size_t i = 0; i < pre.rows; ++i)
    for (std::size_t j = 0; j < pre.cols; ++j) pre(i, j) += bias.value(0, j);
  DenseMatrix out = pre;
  if (act == Activation::Relu)
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->valid = true;
  }
  return out;
}

DenseMatrix AffineLayer::backward(const DenseMatrix& upstream,
                                  const AffineCache& cache) {
  if (!cache.valid)
    throw StateError("affine_backward: missing forward cache for '" +
                     weight.name + "'");
  if (!upstream.same_shape(cache.pre))
    throw DimensionError("affine_backward: upstream " + upstream.shape_str() +
                         " does not match forward output " +
                         cache.pre.shape_str());
  DenseMatrix dpre = upstream;
  if (act == Activation::Relu) {
    for (std::size_t i = 0; i < dpre.data.size(); ++i)
      if (cache.pre.data[i] <= 0.0) dpre.data[i] = 0.0;
  }
  add_inplace(weight.grad, matmul(transpose(cache.input), dpre));
  for (std::size_t i = 0; i < dpre.rows; ++i)
    for (std::size_t j = 0; j < dpre.cols; ++j)
      bias.grad(0, j) += dpre(i, j);
  return matmul(dpre, transpose(weight.value));
}

void AffineLayer::init(Rng& rng) {
  const double lim =
      std::sqrt(6.0 / static_cast<double>(d_in() + d_out()));
  for (double& v : weight.value.data) v = rng.uniform(-lim, lim);
  std::fill(bias.value.data.begin(), bias.value.data.end(), 0.0);
}

std::vector<DenseMatrix> Mlp::forward_taps(const DenseMatrix& x,
                                           Cache* cache) const {
  if (cache) cache->layer_caches.assign(layers.size(), {});
  std::vector<DenseMatrix> taps;
  taps.reserve(layers.size());
  const DenseMatrix* cur = &x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    taps.push_back(layers[l].forward(
        *cur, cache ? &cache->layer_caches[l] : nullptr));
    cur = &taps.back();
  }
  return taps;
}

DenseMatrix Mlp::forward(const DenseMatrix& x, Cache* cache) const {
  auto taps = forward_taps(x, cache);
  return std::move(taps.back());
}

DenseMatrix Mlp::backward(const DenseMatrix& output_grad,
                          const std::vector<DenseMatrix>& tap_grads,
                          const Cache& cache) {
  if (cache.layer_caches.size() != layers.size())
    throw StateError("mlp backward: missing forward cache");
  DenseMatrix g = output_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l < tap_grads.size() && tap_grads[l].size() > 0)
      add_inplace(g, tap_grads[l]);
    g = layers[l].backward(g, cache.layer_caches[l]);
  }
  return g;
}

std::vector<ParamBlock*> Mlp::params() {
  std::vector<ParamBlock*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void Mlp::init(Rng& rng) {
  for (auto& l : layers) l.init(rng);
}

}  // namespace caql
