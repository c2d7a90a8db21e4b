#pragma once

#include <string>
#include <vector>

#include "caql/model.hpp"
#include "caql/rng.hpp"
#include "caql/stream.hpp"

namespace caql {

struct MemoryEntry {
  std::string id;  // originating sample id, kept for diagnostics
  std::vector<double> feature;
  double score{0.0};
  std::size_t origin_session{0};
};

// Per-session-quota prototype store. Entries are kept grouped by origin
// session and sorted by score inside each group; old features are refreshed
// through the projector at most once per session.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t per_session_quota)
      : quota_(per_session_quota) {}

  std::size_t quota() const { return quota_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  // Clears the once-per-session refresh guard.
  void begin_session();

  // Appends one session's prototypes; enforces the per-session quota and
  // score ordering. Throws DomainError if the session already has entries.
  void append_prototypes(std::vector<MemoryEntry> prototypes);

  // b1 entries uniformly without replacement (all entries if fewer).
  std::vector<MemoryEntry> sample_batch(std::size_t b1, Rng& rng) const;

  // feature <- feature + p(feature) for every entry, exactly once per
  // session. Scores, origins and ordering are untouched.
  void refresh(const ManifoldProjector& projector);

  std::string export_csv() const;
  static MemoryBank import_csv(const std::string& text,
                               std::size_t per_session_quota);

 private:
  std::vector<MemoryEntry> entries_;
  std::size_t quota_;
  bool refreshed_this_session_{false};
};

// Ordered uniform sampling: sort the session's train scores, split the score
// range into M equal intervals, keep the sample nearest each occupied
// interval's midpoint (ties: lower score, then lexicographic id). Features
// come from the current backbone.
std::vector<MemoryEntry> ous_select(const SessionData& session,
                                    const ModelState& model, std::size_t m,
                                    bool use_predictions = false);

}  // namespace caql
