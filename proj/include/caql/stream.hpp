#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "caql/matrix.hpp"
#include "caql/rng.hpp"

namespace caql {

struct Sample {
  std::string id;
  std::vector<double> input;
  double score{0.0};
  int grade{0};
};

struct SessionData {
  std::size_t session_index{0};
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::pair<double, double> score_range{0.0, 0.0};
};

struct StreamConfig {
  std::size_t grade_count{5};         // G
  std::size_t samples_per_session{20};  // S
  std::size_t session_count{5};       // T, defaults to G
  std::size_t input_dim{16};
  std::size_t test_per_session{32};
  double score_low{0.0};
  double score_high{100.0};
  double shift_strength{0.5};
  double label_noise_std{0.0};   // in units of one grade-interval width
  double label_fraction{1.0};    // fraction of train labels retained
  std::uint64_t seed{0};

  void validate() const;  // throws DomainError naming the field
};

// Grade-incremental synthetic stream. Session t draws scores uniformly from
// the t-th of G equal score intervals; inputs are M_t * phi(score) + noise
// where M_t drifts away from M_0 at a rate set by shift_strength.
std::vector<SessionData> generate_synthetic_stream(const StreamConfig& cfg);

// The fixed nonlinear lift of a score into input space (8-term basis tiled
// to dim entries). Exposed for tests.
std::vector<double> score_lift(double score, double score_low,
                               double score_high, std::size_t dim);

// The session-t mixing matrix for a given config (M_0 + t*shift*D_t).
DenseMatrix session_mixing_matrix(const StreamConfig& cfg, std::size_t t);

enum class SplitPolicy {
  Auto,            // use the split column when present, else hash split
  UseSplitColumn,  // require the split column
  HashSplit,       // ignore any split column; deterministic 75/25 by id hash
};

struct CsvLoadOptions {
  SplitPolicy split{SplitPolicy::Auto};
  std::size_t grade_count{5};
  double score_low{0.0};
  double score_high{100.0};
};

// Schema: id,session,score[,split],f0,...,f{d-1} with a header row.
// Rows are grouped by session (order preserved); grades derive from the
// configured interval partition. Throws ParseError with the row number.
std::vector<SessionData> load_feature_csv(const std::string& path,
                                          const CsvLoadOptions& opt);

void export_stream_csv(const std::vector<SessionData>& stream,
                       const std::string& path);

// Grade of a score under a G-way equal partition of [low, high].
int grade_of_score(double score, double low, double high, std::size_t grades);

}  // namespace caql
