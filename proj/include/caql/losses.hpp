#pragma once

#include <utility>
#include <vector>

#include "caql/matrix.hpp"

namespace caql {

enum class TuneMode { AllBelow, BoundaryOnly };

struct ScalarLoss {
  double value{0.0};
  DenseMatrix grad;  // w.r.t. the differentiated argument
};

// Mean squared error over a column of predictions; grad = 2(pred-target)/n.
ScalarLoss loss_regression(const DenseMatrix& pred, const DenseMatrix& target);

// Cross-session feature consistency. Sums ||cur_l - prev_l||^2 over the
// constrained layers, mean over samples. Frozen taps get no gradient.
// l_opt is 1-indexed in [1, L]; AllBelow trains against layers l < l_opt,
// BoundaryOnly against layer l_opt - 1 only.
struct TuneLoss {
  double value{0.0};
  std::vector<DenseMatrix> tap_grads;  // aligned with current taps; empty = none
};
TuneLoss loss_tune(const std::vector<DenseMatrix>& current_taps,
                   const std::vector<DenseMatrix>& frozen_taps,
                   std::size_t l_opt, TuneMode mode);

// Projector discrepancy, mean over samples of the squared feature error.
// Gradient is w.r.t. `predicted`; `actual` is a detached target.
ScalarLoss loss_proj(const DenseMatrix& actual, const DenseMatrix& predicted);

// Pairwise angular distances on the unit hypersphere. Rows are normalized;
// inner products clamped to +-(1 - 1e-7) before arccos; self-pairs are
// exactly 0. Throws DegenerateFeatureError naming a (near-)zero row.
DenseMatrix angular_distance_matrix(const DenseMatrix& features);

// Chain rule through arccos and the row normalization: given dL/dA,
// returns dL/dfeatures. Entries at clamped inner products get no gradient.
DenseMatrix angular_distance_backward(const DenseMatrix& features,
                                      const DenseMatrix& grad_a);

// Normalized absolute score differences, clamped to [0, 1].
DenseMatrix score_distance_matrix(const std::vector<double>& scores,
                                  double score_low, double score_high);

// Old/new row split of a joint (b1+b2)-sample batch.
struct BlockPartition {
  std::size_t old_count{0};  // b1, memory rows first
  std::size_t new_count{0};  // b2, current rows after
  std::size_t total() const { return old_count + new_count; }
};

struct DistanceMatrices {
  DenseMatrix angular;  // A
  DenseMatrix score;    // S
  BlockPartition part;
};

DistanceMatrices build_distance_matrices(const DenseMatrix& features,
                                         const std::vector<double>& scores,
                                         double score_low, double score_high,
                                         std::size_t old_count);

// Alignment of A/pi against S: mean-squared discrepancy of the full matrix
// plus the four old/new sub-blocks, each term normalized by its element
// count. Returns the value and dL/dA.
struct RegAlignment {
  double value{0.0};
  DenseMatrix grad_a;
};
RegAlignment reg_alignment(const DenseMatrix& angular, const DenseMatrix& score,
                           BlockPartition part);

// Full graph regularizer with gradients w.r.t. the feature rows.
struct RegLoss {
  double value{0.0};
  DenseMatrix feature_grad;
};
RegLoss loss_reg(const DenseMatrix& features, const DenseMatrix& score,
                 BlockPartition part);

struct ObjectiveParts {
  double loss_d{0.0};
  double loss_m{0.0};
  double loss_tune{0.0};
  double loss_proj{0.0};
  double loss_reg{0.0};
};

struct ObjectiveWeights {
  double tune{1.0};
  double proj{1.0};
  double reg{1.0};
};

// L_D + L_M + lambda_tune L_tune + lambda_proj L_proj + lambda_reg L_reg.
// Throws NumericError naming the first non-finite term.
double total_objective(const ObjectiveParts& parts, const ObjectiveWeights& w);

}  // namespace caql
