#pragma once

#include <vector>

#include "caql/matrix.hpp"
#include "caql/model.hpp"
#include "caql/stream.hpp"

namespace caql {

// Standard Davies-Bouldin index over labeled clusters: mean over clusters of
// the worst (sigma_i + sigma_j) / dist(c_i, c_j), sigma = mean distance to
// centroid. Lower is better separated. Throws DegenerateClusteringError on
// fewer than 2 non-empty clusters or coincident centroids.
double davies_bouldin(const DenseMatrix& features,
                      const std::vector<int>& labels);

// Cluster quality proxy: 1 / DB, higher is better.
double cluster_quality(const DenseMatrix& features,
                       const std::vector<int>& labels);

// Smallest 1-indexed layer whose tuned/fixed quality ratio exceeds 1+eps;
// falls back to L when none qualifies.
std::size_t select_boundary(const std::vector<double>& ratios, double epsilon);

struct LayerAbstractionProfile {
  std::vector<double> c_fix;      // per-layer quality, fixed backbone
  std::vector<double> c_tune;     // per-layer quality, tuned backbone
  std::vector<double> ratio;      // c_tune / c_fix, 1.0 when degenerate
  std::vector<bool> degenerate;   // layers where clustering was degenerate
  std::size_t l_opt{0};
  double epsilon{0.0};
};

// Profiles every layer of both backbones on the base session only and picks
// the boundary. Samples are clustered by score: the session's score range is
// split into `score_bins` equal intervals and each sample labeled by its bin.
LayerAbstractionProfile profile_layers(const SessionData& base_session,
                                       const Backbone& fixed_backbone,
                                       const Backbone& tuned_backbone,
                                       double epsilon,
                                       std::size_t score_bins = 5);

}  // namespace caql
