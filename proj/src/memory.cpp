#include "caql/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "caql/errors.hpp"

namespace caql {

void MemoryBank::begin_session() { refreshed_this_session_ = false; }

void MemoryBank::append_prototypes(std::vector<MemoryEntry> prototypes) {
  if (prototypes.empty()) return;
  const std::size_t origin = prototypes.front().origin_session;
  for (const auto& p : prototypes)
    if (p.origin_session != origin)
      throw DomainError("memory: prototypes must share one origin session");
  for (const auto& e : entries_)
    if (e.origin_session == origin)
      throw DomainError("memory: session " + std::to_string(origin) +
                        " already has prototypes");
  if (prototypes.size() > quota_)
    throw DomainError("memory: " + std::to_string(prototypes.size()) +
                      " prototypes exceed quota " + std::to_string(quota_));
  std::sort(prototypes.begin(), prototypes.end(),
            [](const MemoryEntry& a, const MemoryEntry& b) {
              return a.score < b.score;
            });
  entries_.insert(entries_.end(),
                  std::make_move_iterator(prototypes.begin()),
                  std::make_move_iterator(prototypes.end()));
}

std::vector<MemoryEntry> MemoryBank::sample_batch(std::size_t b1,
                                                  Rng& rng) const {
  if (entries_.empty()) return {};
  if (b1 >= entries_.size()) return entries_;
  std::vector<std::size_t> idx(entries_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<MemoryEntry> out;
  out.reserve(b1);
  for (std::size_t k = 0; k < b1; ++k) {
    const std::size_t j =
        k + static_cast<std::size_t>(rng.next_below(idx.size() - k));
    std::swap(idx[k], idx[j]);
    out.push_back(entries_[idx[k]]);
  }
  return out;
}

void MemoryBank::refresh(const ManifoldProjector& projector) {
  if (refreshed_this_session_)
    throw StateError("memory: refresh already applied this session");
  if (!entries_.empty()) {
    const std::size_t dim = entries_.front().feature.size();
    if (projector.net.d_in() != dim)
      throw StateError("memory: projector dim " +
                       std::to_string(projector.net.d_in()) +
                       " does not match stored features " +
                       std::to_string(dim));
    DenseMatrix batch(entries_.size(), dim);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      std::copy(entries_[i].feature.begin(), entries_[i].feature.end(),
                batch.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
    const DenseMatrix projected = projector.project(batch);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (std::size_t k = 0; k < dim; ++k)
        entries_[i].feature[k] = projected(i, k);
  }
  refreshed_this_session_ = true;
}

std::string MemoryBank::export_csv() const {
  std::ostringstream out;
  const std::size_t dim = entries_.empty() ? 0 : entries_.front().feature.size();
  out << "origin_session,score";
  for (std::size_t k = 0; k < dim; ++k) out << ",f" << k;
  out << "\n";
  char buf[32];
  for (const auto& e : entries_) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.score);
    out << e.origin_session << ',' << buf;
    for (double v : e.feature) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  return out.str();
}

MemoryBank MemoryBank::import_csv(const std::string& text,
                                  std::size_t per_session_quota) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("memory csv: missing header");
  MemoryBank bank(per_session_quota);
  std::map<std::size_t, std::vector<MemoryEntry>> by_origin;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MemoryEntry e;
    if (!std::getline(ss, field, ','))
      throw ParseError("memory csv row " + std::to_string(row));
    e.origin_session = static_cast<std::size_t>(std::stoul(field));
    if (!std::getline(ss, field, ','))
      throw ParseError("memory csv row " + std::to_string(row));
    e.score = std::stod(field);
    while (std::getline(ss, field, ',')) e.feature.push_back(std::stod(field));
    by_origin[e.origin_session].push_back(std::move(e));
  }
  for (auto& [origin, entries] : by_origin)
    bank.append_prototypes(std::move(entries));
  return bank;
}

std::vector<MemoryEntry> ous_select(const SessionData& session,
                                    const ModelState& model, std::size_t m,
                                    bool use_predictions) {
  if (session.train.empty())
    throw DomainError("ous_select: empty session " +
                      std::to_string(session.session_index));
  if (m < 1) throw DomainError("ous_select: M must be >= 1");

  const std::size_t n = session.train.size();
  const std::size_t dim = session.train[0].input.size();
  DenseMatrix inputs(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(session.train[i].input.begin(), session.train[i].input.end(),
              inputs.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
  const DenseMatrix features = model.backbone.features(inputs);

  std::vector<double> order_scores(n);
  if (use_predictions) {
    const DenseMatrix pred = model.regressor.predict(features);
    for (std::size_t i = 0; i < n; ++i) order_scores[i] = pred(i, 0);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      order_scores[i] = session.train[i].score;
  }

  const auto [lo_it, hi_it] =
      std::minmax_element(order_scores.begin(), order_scores.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double width = hi - lo;

  // Nearest-to-midpoint representative per occupied interval.
  std::vector<std::ptrdiff_t> chosen(m, -1);
  auto better = [&](std::size_t cand, std::size_t cur, double mid) {
    const double dc = std::abs(order_scores[cand] - mid);
    const double di = std::abs(order_scores[cur] - mid);
    if (dc != di) return dc < di;
    if (order_scores[cand] != order_scores[cur])
      return order_scores[cand] < order_scores[cur];
    return session.train[cand].id < session.train[cur].id;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t interval = 0;
    if (width > 0.0) {
      interval = static_cast<std::size_t>(
          std::floor((order_scores[i] - lo) / width * static_cast<double>(m)));
      interval = std::min(interval, m - 1);
    }
    const double mid =
        lo + width * (static_cast<double>(interval) + 0.5) / static_cast<double>(m);
    if (chosen[interval] < 0 ||
        better(i, static_cast<std::size_t>(chosen[interval]), mid))
      chosen[interval] = static_cast<std::ptrdiff_t>(i);
  }

  std::vector<MemoryEntry> out;
  for (std::size_t interval = 0; interval < m; ++interval) {
    if (chosen[interval] < 0) continue;
    const auto i = static_cast<std::size_t>(chosen[interval]);
    MemoryEntry e;
    e.id = session.train[i].id;
    e.score = session.train[i].score;
    e.origin_session = session.session_index;
    e.feature.resize(features.cols);
    for (std::size_t k = 0; k < features.cols; ++k)
      e.feature[k] = features(i, k);
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const MemoryEntry& a, const MemoryEntry& b) {
    return a.score < b.score;
  });
  return out;
}

}  // namespace caql
