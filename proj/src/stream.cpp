#include "caql/stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "caql/errors.hpp"

namespace caql {

namespace {

constexpr std::uint64_t kStreamM0 = 1;
constexpr std::uint64_t kStreamShift = 2;
constexpr std::uint64_t kStreamSession = 3;
constexpr std::uint64_t kStreamLabelNoise = 4;

constexpr double kInputNoiseStd = 0.05;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void StreamConfig::validate() const {
  if (grade_count < 2) throw DomainError("stream.G: must be >= 2");
  if (samples_per_session < 2) throw DomainError("stream.S: must be >= 2");
  if (!(score_low < score_high))
    throw DomainError("stream.score_low/score_high: need score_low < score_high");
  if (session_count < 2 || session_count > grade_count)
    throw DomainError("stream.T: must satisfy 2 <= T <= G");
  if (input_dim < 1) throw DomainError("stream.d_in: must be >= 1");
  if (test_per_session < 2) throw DomainError("stream.test_per_session: must be >= 2");
  if (shift_strength < 0.0) throw DomainError("stream.shift_strength: must be >= 0");
  if (label_noise_std < 0.0) throw DomainError("stream.label_noise_std: must be >= 0");
  if (!(label_fraction > 0.0) || label_fraction > 1.0)
    throw DomainError("stream.label_fraction: must be in (0, 1]");
}

std::vector<double> score_lift(double score, double score_low,
                               double score_high, std::size_t dim) {
  const double y = (score - score_low) / (score_high - score_low);
  // Amplitudes shape the interference structure: the dominant 4-pi pair
  // winds twice over the score range, so intervals half a range apart fold
  // close together in input space while carrying very different scores.
  // The damped 2-pi pair and monotone terms keep the score identifiable,
  // without making the arc globally rank-extrapolable from one interval.
  constexpr double kMonotone = 0.10;
  constexpr double kSlowWave = 0.15;
  const double basis[8] = {1.0,
                           kMonotone * y,
                           kMonotone * y * y,
                           kMonotone * y * y * y,
                           kSlowWave * std::sin(2.0 * std::numbers::pi * y),
                           kSlowWave * std::cos(2.0 * std::numbers::pi * y),
                           std::sin(4.0 * std::numbers::pi * y),
                           std::cos(4.0 * std::numbers::pi * y)};
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < dim; ++k) out[k] = basis[k % 8];
  return out;
}

int grade_of_score(double score, double low, double high, std::size_t grades) {
  const double width = (high - low) / static_cast<double>(grades);
  const auto g = static_cast<long>(std::floor((score - low) / width));
  return static_cast<int>(
      std::clamp<long>(g, 0, static_cast<long>(grades) - 1));
}

DenseMatrix session_mixing_matrix(const StreamConfig& cfg, std::size_t t) {
  const std::size_t d = cfg.input_dim;
  Rng master(cfg.seed);
  Rng m0_rng = master.fork(kStreamM0);
  DenseMatrix m(d, d);
  for (double& v : m.data) v = m0_rng.gaussian();
  // Fixed Frobenius norm 2 makes shift_strength a relative drift rate:
  // after k incremental steps the manifold has moved k*shift/2 of its size.
  const double rescale = 2.0 / frobenius_norm(m);
  for (double& v : m.data) v *= rescale;
  if (t == 0 || cfg.shift_strength == 0.0) return m;

  // Session perturbation with unit Frobenius norm, so the drift away from
  // M_0 is exactly t * shift_strength and strictly increasing in t.
  Rng d_rng = master.fork(kStreamShift).fork(t);
  DenseMatrix pert(d, d);
  for (double& v : pert.data) v = d_rng.gaussian();
  const double norm = frobenius_norm(pert);
  const double factor =
      static_cast<double>(t) * cfg.shift_strength / norm;
  add_inplace(m, pert, factor);
  return m;
}

namespace {

Sample make_sample(const StreamConfig& cfg, const DenseMatrix& mix,
                   std::size_t session, std::size_t index, bool is_test,
                   double score, Rng& noise_rng) {
  Sample s;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "s%zu_%s%03zu", session,
                is_test ? "te" : "tr", index);
  s.id = buf;
  s.score = score;
  s.grade = static_cast<int>(session);
  const std::vector<double> lift =
      score_lift(score, cfg.score_low, cfg.score_high, cfg.input_dim);
  s.input.assign(cfg.input_dim, 0.0);
  for (std::size_t i = 0; i < cfg.input_dim; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.input_dim; ++k)
      acc += mix(i, k) * lift[k];
    s.input[i] = acc + kInputNoiseStd * noise_rng.gaussian();
  }
  return s;
}

}  // namespace

std::vector<SessionData> generate_synthetic_stream(const StreamConfig& cfg) {
  cfg.validate();
  Rng master(cfg.seed);
  const double interval_width =
      (cfg.score_high - cfg.score_low) / static_cast<double>(cfg.grade_count);

  std::vector<SessionData> stream;
  stream.reserve(cfg.session_count);
  for (std::size_t t = 0; t < cfg.session_count; ++t) {
    const DenseMatrix mix = session_mixing_matrix(cfg, t);
    const double lo = cfg.score_low + static_cast<double>(t) * interval_width;
    const double hi = lo + interval_width;
    Rng srng = master.fork(kStreamSession).fork(t);
    // Separate stream so enabling label noise perturbs train labels only,
    // leaving the rest of the draw sequence (inputs, test set) untouched.
    Rng label_rng = master.fork(kStreamLabelNoise).fork(t);

    SessionData session;
    session.session_index = t;
    session.score_range = {lo, hi};

    const auto kept = static_cast<std::size_t>(std::ceil(
        cfg.label_fraction * static_cast<double>(cfg.samples_per_session)));
    for (std::size_t i = 0; i < cfg.samples_per_session; ++i) {
      double score = srng.uniform(lo, hi);
      Sample s = make_sample(cfg, mix, t, i, false, score, srng);
      if (cfg.label_noise_std > 0.0) {
        // Train labels only; clamped so the score stays inside the grade.
        s.score += cfg.label_noise_std * interval_width * label_rng.gaussian();
        s.score = std::clamp(s.score, lo, std::nextafter(hi, lo));
      }
      if (i < kept) session.train.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < cfg.test_per_session; ++i) {
      const double score = srng.uniform(lo, hi);
      session.test.push_back(make_sample(cfg, mix, t, i, true, score, srng));
    }
    stream.push_back(std::move(session));
  }
  return stream;
}

namespace {

double parse_number(const std::string& field, std::size_t row, const char* what) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end)
    throw ParseError("csv row " + std::to_string(row) + ": non-numeric " +
                     what + " '" + field + "'");
  if (!std::isfinite(v))
    throw ParseError("csv row " + std::to_string(row) + ": non-finite " + what);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<SessionData> load_feature_csv(const std::string& path,
                                          const CsvLoadOptions& opt) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "session" ||
      header[2] != "score")
    throw ParseError("csv: header must start with id,session,score");

  std::size_t split_col = 0;
  bool has_split = false;
  std::size_t feat_begin = 3;
  if (header[3] == "split") {
    has_split = true;
    split_col = 3;
    feat_begin = 4;
  }
  const std::size_t dim = header.size() - feat_begin;
  if (dim == 0) throw ParseError("csv: no feature columns");
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[feat_begin + k] != "f" + std::to_string(k))
      throw ParseError("csv: feature columns must be f0..f" +
                       std::to_string(dim - 1));
  }
  if (opt.split == SplitPolicy::UseSplitColumn && !has_split)
    throw ParseError("csv: split column required but absent");
  const bool use_split_col = has_split && opt.split != SplitPolicy::HashSplit;

  std::map<long, SessionData> sessions;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("csv row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    Sample s;
    s.id = fields[0];
    const double session_val = parse_number(fields[1], row, "session");
    const long session_id = static_cast<long>(session_val);
    if (session_id < 0 || static_cast<double>(session_id) != session_val)
      throw ParseError("csv row " + std::to_string(row) +
                       ": unknown session id '" + fields[1] + "'");
    s.score = parse_number(fields[2], row, "score");
    s.input.resize(dim);
    for (std::size_t k = 0; k < dim; ++k)
      s.input[k] = parse_number(fields[feat_begin + k], row, "feature");
    s.grade = grade_of_score(s.score, opt.score_low, opt.score_high,
                             opt.grade_count);

    bool is_test;
    if (use_split_col) {
      const std::string& sp = fields[split_col];
      if (sp == "train")
        is_test = false;
      else if (sp == "test")
        is_test = true;
      else
        throw ParseError("csv row " + std::to_string(row) +
                         ": split must be 'train' or 'test', got '" + sp + "'");
    } else {
      is_test = fnv1a(s.id) % 4 == 3;  // deterministic 75/25
    }

    SessionData& sess = sessions[session_id];
    sess.session_index = static_cast<std::size_t>(session_id);
    (is_test ? sess.test : sess.train).push_back(std::move(s));
  }
  if (sessions.empty()) throw ParseError("csv: no data rows");

  std::vector<SessionData> out;
  long expect = 0;
  for (auto& [sid, sess] : sessions) {
    if (sid != expect)
      throw ParseError("csv: missing session " + std::to_string(expect) +
                       " (sessions must be contiguous from 0)");
    ++expect;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto* part : {&sess.train, &sess.test})
      for (const Sample& s : *part) {
        lo = std::min(lo, s.score);
        hi = std::max(hi, s.score);
      }
    sess.score_range = {lo, hi};
    out.push_back(std::move(sess));
  }
  return out;
}

void export_stream_csv(const std::vector<SessionData>& stream,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("csv: cannot write '" + path + "'");
  std::size_t dim = 0;
  for (const auto& s : stream)
    for (const auto* part : {&s.train, &s.test})
      if (!part->empty()) dim = (*part)[0].input.size();
  out << "id,session,score,split";
  for (std::size_t k = 0; k < dim; ++k) out << ",f" << k;
  out << "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << ',' << buf;
  };
  for (const auto& sess : stream) {
    for (const auto* part : {&sess.train, &sess.test}) {
      const bool is_test = part == &sess.test;
      for (const Sample& s : *part) {
        out << s.id << ',' << sess.session_index;
        std::snprintf(buf, sizeof(buf), "%.17g", s.score);
        out << ',' << buf << ',' << (is_test ? "test" : "train");
        for (double v : s.input) put(v);
        out << "\n";
      }
    }
  }
}

}  // namespace caql
