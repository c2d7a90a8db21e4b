#include "caql/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "caql/errors.hpp"

namespace caql {

std::vector<double> fractional_ranks(const std::vector<double>& values) {
  if (values.empty()) throw DomainError("fractional_ranks: empty input");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the average of 1-based ranks i+1..j+1
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DimensionError("pearson: length mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  if (a.size() < 2) throw DomainError("pearson: need at least 2 points");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0)
    throw UndefinedCorrelationError("pearson: constant vector");
  return cov / std::sqrt(va * vb);
}

double srcc(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size())
    throw DimensionError("srcc: length mismatch " + std::to_string(pred.size()) +
                         " vs " + std::to_string(target.size()));
  if (pred.size() < 2) throw DomainError("srcc: need at least 2 points");
  try {
    return pearson(fractional_ranks(pred), fractional_ranks(target));
  } catch (const UndefinedCorrelationError&) {
    throw UndefinedCorrelationError("srcc: constant vector has no rank order");
  }
}

void PerfMatrix::set(std::size_t i, std::size_t j, double rho) {
  if (i >= t_ || j >= t_ || j > i)
    throw DomainError("PerfMatrix: cell (" + std::to_string(i) + "," +
                      std::to_string(j) + ") outside the lower triangle");
  cells_[i * t_ + j] = rho;
}

std::optional<double> PerfMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= t_ || j >= t_) return std::nullopt;
  return cells_[i * t_ + j];
}

double rho_aft(const PerfMatrix& perf) {
  const std::size_t t = perf.sessions();
  if (t < 2) throw DomainError("rho_aft: need at least 2 sessions");
  double sum = 0.0;
  for (std::size_t task = 0; task + 1 < t; ++task) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (std::size_t i = task; i < t; ++i) {
      const auto v = perf.at(i, task);
      if (!v) continue;
      if (!any) {
        lo = hi = *v;
        any = true;
      } else {
        lo = std::min(lo, *v);
        hi = std::max(hi, *v);
      }
    }
    if (any) sum += hi - lo;
  }
  return sum / static_cast<double>(t - 1);
}

double rho_fwt(const std::vector<std::optional<double>>& forward_band,
               const std::vector<double>& random_baselines) {
  const std::size_t t = forward_band.size();
  if (t < 2) throw DomainError("rho_fwt: need at least 2 sessions");
  if (random_baselines.size() != t)
    throw DimensionError("rho_fwt: baseline count " +
                         std::to_string(random_baselines.size()) +
                         " does not match session count " + std::to_string(t));
  double sum = 0.0;
  for (std::size_t task = 1; task < t; ++task) {
    if (!forward_band[task])
      throw StateError("rho_fwt: missing forward band entry for task " +
                       std::to_string(task));
    sum += *forward_band[task] - random_baselines[task];
  }
  return sum / static_cast<double>(t - 1);
}

double rmse(const std::vector<double>& pred, const std::vector<double>& target,
            double score_low, double score_high) {
  if (pred.size() != target.size())
    throw DimensionError("rmse: length mismatch");
  if (pred.empty()) throw DomainError("rmse: empty input");
  const double width = score_high - score_low;
  if (!(width > 0.0)) throw DomainError("rmse: degenerate score range");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size()) / (width * width);
}

double feature_deviation_mse(const DenseMatrix& stale,
                             const DenseMatrix& fresh) {
  if (!stale.same_shape(fresh))
    throw DimensionError("feature_deviation_mse: shape mismatch " +
                         stale.shape_str() + " vs " + fresh.shape_str());
  if (stale.size() == 0) throw DomainError("feature_deviation_mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < stale.data.size(); ++i) {
    const double d = stale.data[i] - fresh.data[i];
    s += d * d;
  }
  return s / static_cast<double>(stale.size());
}

}  // namespace caql
