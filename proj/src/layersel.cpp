#include "caql/layersel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "caql/errors.hpp"

namespace caql {

double davies_bouldin(const DenseMatrix& features,
                      const std::vector<int>& labels) {
  if (labels.size() != features.rows)
    throw DimensionError("davies_bouldin: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(features.rows) +
                         " rows");
  if (features.rows < 2)
    throw DegenerateClusteringError("davies_bouldin: need at least 2 samples");

  std::map<int, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < labels.size(); ++i)
    clusters[labels[i]].push_back(i);
  if (clusters.size() < 2)
    throw DegenerateClusteringError("davies_bouldin: need at least 2 clusters");

  const std::size_t d = features.cols;
  const std::size_t k = clusters.size();
  std::vector<std::vector<double>> centroid(k, std::vector<double>(d, 0.0));
  std::vector<double> sigma(k, 0.0);
  std::size_t ci = 0;
  for (const auto& [label, members] : clusters) {
    for (std::size_t i : members)
      for (std::size_t col = 0; col < d; ++col)
        centroid[ci][col] += features(i, col);
    for (double& v : centroid[ci]) v /= static_cast<double>(members.size());
    for (std::size_t i : members) {
      double s = 0.0;
      for (std::size_t col = 0; col < d; ++col) {
        const double diff = features(i, col) - centroid[ci][col];
        s += diff * diff;
      }
      sigma[ci] += std::sqrt(s);
    }
    sigma[ci] /= static_cast<double>(members.size());
    ++ci;
  }

  double db = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      double gap = 0.0;
      for (std::size_t col = 0; col < d; ++col) {
        const double diff = centroid[i][col] - centroid[j][col];
        gap += diff * diff;
      }
      gap = std::sqrt(gap);
      if (gap < 1e-12)
        throw DegenerateClusteringError(
            "davies_bouldin: coincident centroids");
      worst = std::max(worst, (sigma[i] + sigma[j]) / gap);
    }
    db += worst;
  }
  return db / static_cast<double>(k);
}

double cluster_quality(const DenseMatrix& features,
                       const std::vector<int>& labels) {
  return 1.0 / davies_bouldin(features, labels);
}

std::size_t select_boundary(const std::vector<double>& ratios, double epsilon) {
  if (ratios.empty()) throw DomainError("select_boundary: empty ratio list");
  if (epsilon < 0.0) throw DomainError("select_boundary: epsilon must be >= 0");
  for (std::size_t l = 0; l < ratios.size(); ++l) {
    if (!std::isfinite(ratios[l]))
      throw NumericError("select_boundary: non-finite ratio at layer " +
                         std::to_string(l + 1));
    if (ratios[l] > 1.0 + epsilon) return l + 1;
  }
  return ratios.size();  // constrain all non-final layers
}

LayerAbstractionProfile profile_layers(const SessionData& base_session,
                                       const Backbone& fixed_backbone,
                                       const Backbone& tuned_backbone,
                                       double epsilon,
                                       std::size_t score_bins) {
  if (base_session.train.empty())
    throw DomainError("profile_layers: empty base session");
  if (fixed_backbone.layer_count() != tuned_backbone.layer_count())
    throw DimensionError("profile_layers: backbones differ in depth");

  const std::size_t n = base_session.train.size();
  const std::size_t dim = base_session.train[0].input.size();
  DenseMatrix inputs(n, dim);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(base_session.train[i].input.begin(),
              base_session.train[i].input.end(),
              inputs.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
    scores[i] = base_session.train[i].score;
  }

  // Score-derived cluster labels over the session's own range.
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it;
  const double width = *hi_it - lo;
  std::vector<int> labels(n, 0);
  if (width > 0.0)
    for (std::size_t i = 0; i < n; ++i) {
      auto bin = static_cast<long>(
          std::floor((scores[i] - lo) / width * static_cast<double>(score_bins)));
      labels[i] = static_cast<int>(
          std::clamp<long>(bin, 0, static_cast<long>(score_bins) - 1));
    }

  const auto fixed_taps = fixed_backbone.forward_taps(inputs);
  const auto tuned_taps = tuned_backbone.forward_taps(inputs);
  const std::size_t layer_count = fixed_taps.size();

  LayerAbstractionProfile profile;
  profile.epsilon = epsilon;
  profile.c_fix.assign(layer_count, 0.0);
  profile.c_tune.assign(layer_count, 0.0);
  profile.ratio.assign(layer_count, 1.0);
  profile.degenerate.assign(layer_count, false);
  for (std::size_t l = 0; l < layer_count; ++l) {
    try {
      profile.c_fix[l] = cluster_quality(fixed_taps[l], labels);
      profile.c_tune[l] = cluster_quality(tuned_taps[l], labels);
      const double r = profile.c_tune[l] / profile.c_fix[l];
      if (!std::isfinite(r) || r <= 0.0)
        throw DegenerateClusteringError("profile_layers: unusable ratio");
      profile.ratio[l] = r;
    } catch (const DegenerateClusteringError&) {
      profile.degenerate[l] = true;
      profile.ratio[l] = 1.0;
    }
  }
  profile.l_opt = select_boundary(profile.ratio, epsilon);
  return profile;
}

}  // namespace caql
