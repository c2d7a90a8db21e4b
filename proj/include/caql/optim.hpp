#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "caql/matrix.hpp"

namespace caql {

// One learnable tensor with its gradient accumulator and Adam moments.
struct ParamBlock {
  std::string name;
  DenseMatrix value;
  DenseMatrix grad;
  DenseMatrix m1;  // first moment
  DenseMatrix m2;  // second moment
  std::uint64_t step{0};

  ParamBlock() = default;
  ParamBlock(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        m1(rows, cols),
        m2(rows, cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct AdamConfig {
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

// Bias-corrected Adam with decoupled weight decay. Grads are zeroed after
// the update. Throws NumericError naming the block on a non-finite grad.
void adam_step(const std::vector<ParamBlock*>& params, double lr,
               double weight_decay, const AdamConfig& cfg = {});

// Central-difference check of the analytic grads currently stored in
// `params`. `loss_fn` must evaluate the loss at the current parameter
// values without touching grads. Returns the max over coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double finite_diff_check(const std::function<double()>& loss_fn,
                         const std::vector<ParamBlock*>& params,
                         double perturbation);

}  // namespace caql
