#pragma once

#include <optional>
#include <vector>

#include "caql/matrix.hpp"

namespace caql {

// 1-based fractional ranks; ties receive the average of their rank span.
std::vector<double> fractional_ranks(const std::vector<double>& values);

// Spearman rank correlation: Pearson correlation of fractional ranks.
// Throws UndefinedCorrelationError when either vector is constant.
double srcc(const std::vector<double>& pred, const std::vector<double>& target);

// Pearson correlation of raw values (used for the step-size diagnostic).
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Lower-triangular session-by-test-set correlation grid. cell(i, j) is the
// SRCC on test set j after training through session i; defined for j <= i.
class PerfMatrix {
 public:
  PerfMatrix() = default;
  explicit PerfMatrix(std::size_t t) : t_(t), cells_(t * t) {}

  std::size_t sessions() const { return t_; }
  void set(std::size_t i, std::size_t j, double rho);
  std::optional<double> at(std::size_t i, std::size_t j) const;

 private:
  std::size_t t_{0};
  std::vector<std::optional<double>> cells_;
};

// Average forgetting: per past task, the max spread between any two defined
// measurements of that task, averaged over the first T-1 tasks.
double rho_aft(const PerfMatrix& perf);

// Forward transfer: mean over t of band[t] - baseline[t], where band[t] is
// the SRCC on test set t measured after session t-1 and baseline[t] is the
// SRCC of a freshly initialized model on test set t. Index 0 is unused.
double rho_fwt(const std::vector<std::optional<double>>& forward_band,
               const std::vector<double>& random_baselines);

// Range-normalized MSE: mean squared error / (high - low)^2.
double rmse(const std::vector<double>& pred, const std::vector<double>& target,
            double score_low, double score_high);

// Mean squared entrywise difference between two feature sets.
double feature_deviation_mse(const DenseMatrix& stale, const DenseMatrix& fresh);

struct MetricReport {
  std::optional<double> rho_avg;
  std::optional<double> rho_aft;
  std::optional<double> rho_fwt;
  std::optional<double> rmse_value;
  std::vector<double> per_session_srcc;  // final model on each test set
  std::optional<double> deviation_stale_mse;
  std::optional<double> deviation_refreshed_mse;
};

}  // namespace caql
