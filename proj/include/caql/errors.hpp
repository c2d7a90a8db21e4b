#pragma once

#include <stdexcept>
#include <string>

namespace caql {

// Shape conflicts between matrices/layers. Message names both shapes.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required (losses, grads, probes).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API used out of order (missing cache, double refresh, missing band entry).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Inputs outside an operation's domain (empty batch, bad range, T too small).
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed CSV/JSON input. Message carries the offending row or field path.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fewer than two clusters, or coincident centroids.
struct DegenerateClusteringError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A feature row with (near-)zero norm cannot be placed on the unit sphere.
struct DegenerateFeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rank correlation of a constant vector.
struct UndefinedCorrelationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace caql
