#include "caql/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "caql/errors.hpp"

namespace caql {

namespace {
constexpr double kCosClamp = 1.0 - 1e-7;
constexpr double kMinRowNorm = 1e-12;
}  // namespace

ScalarLoss loss_regression(const DenseMatrix& pred, const DenseMatrix& target) {
  if (!pred.same_shape(target))
    throw DimensionError("loss_regression: shape mismatch " + pred.shape_str() +
                         " vs " + target.shape_str());
  if (pred.size() == 0) throw DomainError("loss_regression: empty batch");
  const double n = static_cast<double>(pred.rows);
  ScalarLoss out;
  out.grad = DenseMatrix(pred.rows, pred.cols);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    out.value += d * d;
    out.grad.data[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

TuneLoss loss_tune(const std::vector<DenseMatrix>& current_taps,
                   const std::vector<DenseMatrix>& frozen_taps,
                   std::size_t l_opt, TuneMode mode) {
  if (current_taps.size() != frozen_taps.size())
    throw DimensionError("loss_tune: tap lists differ in length");
  const std::size_t layer_count = current_taps.size();
  if (l_opt < 1 || l_opt > layer_count)
    throw DomainError("loss_tune: l_opt " + std::to_string(l_opt) +
                      " outside [1, " + std::to_string(layer_count) + "]");
  TuneLoss out;
  out.tap_grads.assign(layer_count, {});
  if (layer_count == 0) return out;
  const double n = static_cast<double>(current_taps[0].rows);

  auto constrained = [&](std::size_t l0) {  // 0-indexed layer
    const std::size_t l1 = l0 + 1;
    if (mode == TuneMode::AllBelow) return l1 < l_opt;
    return l_opt >= 2 && l1 == l_opt - 1;
  };

  for (std::size_t l = 0; l < layer_count; ++l) {
    if (!constrained(l)) continue;
    const DenseMatrix& cur = current_taps[l];
    const DenseMatrix& prev = frozen_taps[l];
    if (!cur.same_shape(prev))
      throw DimensionError("loss_tune: layer " + std::to_string(l + 1) +
                           " taps " + cur.shape_str() + " vs " +
                           prev.shape_str());
    DenseMatrix g(cur.rows, cur.cols);
    for (std::size_t i = 0; i < cur.data.size(); ++i) {
      const double d = cur.data[i] - prev.data[i];
      out.value += d * d;
      g.data[i] = 2.0 * d / n;
    }
    out.tap_grads[l] = std::move(g);
  }
  out.value /= n;
  return out;
}

ScalarLoss loss_proj(const DenseMatrix& actual, const DenseMatrix& predicted) {
  if (!actual.same_shape(predicted))
    throw DimensionError("loss_proj: shape mismatch " + actual.shape_str() +
                         " vs " + predicted.shape_str());
  if (actual.size() == 0) throw DomainError("loss_proj: empty batch");
  const double n = static_cast<double>(actual.rows);
  ScalarLoss out;
  out.grad = DenseMatrix(predicted.rows, predicted.cols);
  for (std::size_t i = 0; i < actual.data.size(); ++i) {
    const double d = predicted.data[i] - actual.data[i];
    out.value += d * d;
    out.grad.data[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

namespace {

// Unit rows and their original norms; shared by forward and backward.
void unit_rows(const DenseMatrix& features, DenseMatrix& unit,
               std::vector<double>& norms) {
  unit = features;
  norms.assign(features.rows, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < features.cols; ++k)
      s += features(i, k) * features(i, k);
    const double norm = std::sqrt(s);
    if (norm < kMinRowNorm)
      throw DegenerateFeatureError(
          "angular_distance_matrix: feature row " + std::to_string(i) +
          " has norm below 1e-12");
    norms[i] = norm;
    for (std::size_t k = 0; k < features.cols; ++k) unit(i, k) /= norm;
  }
}

}  // namespace

DenseMatrix angular_distance_matrix(const DenseMatrix& features) {
  if (features.rows == 0) throw DomainError("angular_distance_matrix: empty");
  DenseMatrix unit;
  std::vector<double> norms;
  unit_rows(features, unit, norms);
  const std::size_t n = features.rows;
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < features.cols; ++k)
        dot += unit(i, k) * unit(j, k);
      const double c = std::clamp(dot, -kCosClamp, kCosClamp);
      const double ang = std::acos(c);
      a(i, j) = ang;
      a(j, i) = ang;
    }
  }
  return a;
}

DenseMatrix angular_distance_backward(const DenseMatrix& features,
                                      const DenseMatrix& grad_a) {
  if (grad_a.rows != features.rows || grad_a.cols != features.rows)
    throw DimensionError("angular_distance_backward: grad " +
                         grad_a.shape_str() + " does not match " +
                         std::to_string(features.rows) + " rows");
  DenseMatrix unit;
  std::vector<double> norms;
  unit_rows(features, unit, norms);
  const std::size_t n = features.rows;
  const std::size_t d = features.cols;
  DenseMatrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;  // self-distance fixed at 0
      const double up = grad_a(i, j);
      if (up == 0.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += unit(i, k) * unit(j, k);
      if (dot >= kCosClamp || dot <= -kCosClamp) continue;  // clamped flat
      const double da_dc = -1.0 / std::sqrt(1.0 - dot * dot);
      const double coeff_i = up * da_dc / norms[i];
      const double coeff_j = up * da_dc / norms[j];
      for (std::size_t k = 0; k < d; ++k) {
        out(i, k) += coeff_i * (unit(j, k) - dot * unit(i, k));
        out(j, k) += coeff_j * (unit(i, k) - dot * unit(j, k));
      }
    }
  }
  return out;
}

DenseMatrix score_distance_matrix(const std::vector<double>& scores,
                                  double score_low, double score_high) {
  const double width = score_high - score_low;
  if (!(width > 0.0))
    throw DomainError("score_distance_matrix: degenerate range");
  const std::size_t n = scores.size();
  DenseMatrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::min(1.0, std::abs(scores[i] - scores[j]) / width);
      s(i, j) = v;
      s(j, i) = v;
    }
  return s;
}

DistanceMatrices build_distance_matrices(const DenseMatrix& features,
                                         const std::vector<double>& scores,
                                         double score_low, double score_high,
                                         std::size_t old_count) {
  if (scores.size() != features.rows)
    throw DimensionError("build_distance_matrices: " +
                         std::to_string(scores.size()) + " scores for " +
                         std::to_string(features.rows) + " feature rows");
  if (old_count > features.rows)
    throw DomainError("build_distance_matrices: old_count exceeds batch");
  DistanceMatrices out;
  out.angular = angular_distance_matrix(features);
  out.score = score_distance_matrix(scores, score_low, score_high);
  out.part = {old_count, features.rows - old_count};
  return out;
}

RegAlignment reg_alignment(const DenseMatrix& angular, const DenseMatrix& score,
                           BlockPartition part) {
  if (!angular.same_shape(score))
    throw DimensionError("reg_alignment: A " + angular.shape_str() +
                         " vs S " + score.shape_str());
  const std::size_t n = angular.rows;
  if (angular.cols != n) throw DimensionError("reg_alignment: A must be square");
  if (part.total() != n)
    throw DomainError("reg_alignment: partition does not tile the matrix");

  RegAlignment out;
  out.grad_a = DenseMatrix(n, n);
  const double b1 = static_cast<double>(part.old_count);
  const double b2 = static_cast<double>(part.new_count);

  // element-count weight of the block containing (i, j), 0 when empty
  auto block_weight = [&](std::size_t i, std::size_t j) {
    const bool io = i < part.old_count;
    const bool jo = j < part.old_count;
    const double cnt = (io ? b1 : b2) * (jo ? b1 : b2);
    return cnt > 0.0 ? 1.0 / cnt : 0.0;
  };
  const double full_w = 1.0 / static_cast<double>(n * n);

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double ahat = angular(i, j) / std::numbers::pi;
      const double diff = ahat - score(i, j);
      const double w = full_w + block_weight(i, j);
      out.value += w * diff * diff;
      out.grad_a(i, j) = 2.0 * w * diff / std::numbers::pi;
    }
  return out;
}

RegLoss loss_reg(const DenseMatrix& features, const DenseMatrix& score,
                 BlockPartition part) {
  const DenseMatrix a = angular_distance_matrix(features);
  RegAlignment ra = reg_alignment(a, score, part);
  RegLoss out;
  out.value = ra.value;
  out.feature_grad = angular_distance_backward(features, ra.grad_a);
  return out;
}

double total_objective(const ObjectiveParts& parts, const ObjectiveWeights& w) {
  const std::pair<const char*, double> named[] = {
      {"L_D", parts.loss_d},
      {"L_M", parts.loss_m},
      {"L_tune", parts.loss_tune},
      {"L_proj", parts.loss_proj},
      {"L_reg", parts.loss_reg},
  };
  for (const auto& [name, v] : named)
    if (!std::isfinite(v))
      throw NumericError(std::string("total_objective: non-finite term ") +
                         name);
  return parts.loss_d + parts.loss_m + w.tune * parts.loss_tune +
         w.proj * parts.loss_proj + w.reg * parts.loss_reg;
}

}  // namespace caql
