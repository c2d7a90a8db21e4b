#include "caql/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include "caql/errors.hpp"
#include "caql/losses.hpp"
#include "caql/memory.hpp"
#include "caql/metrics.hpp"
#include "caql/layersel.hpp"
#include "caql/model.hpp"
#include "caql/optim.hpp"
#include "caql/rng.hpp"

namespace caql {

namespace {

// Rank-by-counting oracle, written independently of fractional_ranks.
std::vector<double> oracle_ranks(const std::vector<double>& v, bool corrupt) {
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    if (corrupt)
      ranks[i] = static_cast<double>(less + 1);  // drops the tie average
    else
      ranks[i] = static_cast<double>(less) +
                 (static_cast<double>(equal) + 1.0) / 2.0;
  }
  return ranks;
}

double oracle_pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const double ma = sa / n, mb = sb / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

}  // namespace

SuiteResult selftest_srcc(std::size_t cases, bool corrupt_ties) {
  // Hand cases first.
  {
    const std::vector<double> t{1, 2, 3}, p{1, 3, 2};
    if (std::abs(srcc(p, t) - 0.5) > 1e-12)
      return {false, "hand case [1,3,2] vs [1,2,3] != 0.5"};
    if (std::abs(srcc(t, t) - 1.0) > 1e-12)
      return {false, "identical vectors != 1"};
    const std::vector<double> rev{3, 2, 1};
    if (std::abs(srcc(rev, t) + 1.0) > 1e-12)
      return {false, "reversed vectors != -1"};
  }
  Rng rng(0xca01);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 3 + rng.next_below(6);  // 3..8
    std::vector<double> pred(n), target(n);
    // Half the cases draw from a small grid to force ties.
    const bool grid = c % 2 == 0;
    do {
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = grid ? static_cast<double>(rng.next_below(4))
                       : rng.uniform(-10, 10);
        target[i] = grid ? static_cast<double>(rng.next_below(4))
                         : rng.uniform(-10, 10);
      }
    } while (is_constant(pred) || is_constant(target));
    const double got = srcc(pred, target);
    const double want = oracle_pearson(oracle_ranks(pred, corrupt_ties),
                                       oracle_ranks(target, corrupt_ties));
    if (!(std::abs(got - want) <= 1e-12)) {
      std::ostringstream os;
      os << "case " << c << ": srcc " << got << " vs oracle " << want;
      return {false, os.str()};
    }
  }
  return {true, std::to_string(cases) + " random cases within 1e-12"};
}

namespace {

// Definitional Davies-Bouldin, written from scratch against the formula.
double oracle_db(const DenseMatrix& x, const std::vector<int>& labels) {
  std::set<int> ids(labels.begin(), labels.end());
  std::vector<int> classes(ids.begin(), ids.end());
  const std::size_t k = classes.size();
  std::vector<std::vector<double>> c(k, std::vector<double>(x.cols, 0.0));
  std::vector<double> s(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t ci = 0; ci < k; ++ci) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      if (labels[i] != classes[ci]) continue;
      ++count[ci];
      for (std::size_t col = 0; col < x.cols; ++col) c[ci][col] += x(i, col);
    }
    for (double& v : c[ci]) v /= static_cast<double>(count[ci]);
    for (std::size_t i = 0; i < x.rows; ++i) {
      if (labels[i] != classes[ci]) continue;
      double acc = 0;
      for (std::size_t col = 0; col < x.cols; ++col)
        acc += (x(i, col) - c[ci][col]) * (x(i, col) - c[ci][col]);
      s[ci] += std::sqrt(acc);
    }
    s[ci] /= static_cast<double>(count[ci]);
  }
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double m = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double gap = 0;
      for (std::size_t col = 0; col < x.cols; ++col)
        gap += (c[i][col] - c[j][col]) * (c[i][col] - c[j][col]);
      m = std::max(m, (s[i] + s[j]) / std::sqrt(gap));
    }
    total += m;
  }
  return total / static_cast<double>(k);
}

}  // namespace

SuiteResult selftest_davies_bouldin(std::size_t cases) {
  {
    DenseMatrix x(4, 2);
    x.data = {0, 0, 0, 1, 4, 0, 4, 1};
    const std::vector<int> labels{0, 0, 1, 1};
    if (std::abs(davies_bouldin(x, labels) - 0.25) > 1e-15)
      return {false, "hand case != 0.25"};
  }
  Rng rng(0xca02);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t k = 2 + rng.next_below(3);  // 2..4
    const std::size_t d = 1 + rng.next_below(4);  // 1..4
    const std::size_t n = k + rng.next_below(21 - k);
    DenseMatrix x(n, d);
    std::vector<int> labels(n);
    // Clusters around well-separated centers keeps centroids distinct.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cl = i < k ? i : rng.next_below(k);
      labels[i] = static_cast<int>(cl);
      for (std::size_t col = 0; col < d; ++col)
        x(i, col) = 10.0 * static_cast<double>(cl) + rng.uniform(-1, 1);
    }
    const double got = davies_bouldin(x, labels);
    const double want = oracle_db(x, labels);
    if (!(std::abs(got - want) <= 1e-10)) {
      std::ostringstream os;
      os << "case " << c << ": db " << got << " vs oracle " << want;
      return {false, os.str()};
    }
  }
  return {true, std::to_string(cases) + " random clusterings within 1e-10"};
}

namespace {

DenseMatrix block_matrix(const ParamBlock& p) { return p.value; }

// Random features kept away from arccos clamp boundaries.
DenseMatrix safe_features(std::size_t n, std::size_t d, Rng& rng) {
  while (true) {
    DenseMatrix f(n, d);
    for (double& v : f.data) v = rng.uniform(-2, 2);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      double ni = 0;
      for (std::size_t c = 0; c < d; ++c) ni += f(i, c) * f(i, c);
      if (ni < 1e-2) ok = false;
      for (std::size_t j = i + 1; j < n && ok; ++j) {
        double nj = 0, dot = 0;
        for (std::size_t c = 0; c < d; ++c) {
          nj += f(j, c) * f(j, c);
          dot += f(i, c) * f(j, c);
        }
        if (std::abs(dot) / std::sqrt(ni * nj) > 1.0 - 1e-3) ok = false;
      }
    }
    if (ok) return f;
  }
}

}  // namespace

SuiteResult selftest_gradients() {
  Rng rng(0xca03);
  const double tol = 1e-4;

  // L_D and L_M share the regression loss; check both instances.
  for (int rep = 0; rep < 2; ++rep) {
    ParamBlock pred("pred", 4, 1);
    DenseMatrix target(4, 1);
    for (double& v : pred.value.data) v = rng.uniform(-2, 2);
    for (double& v : target.data) v = rng.uniform(-2, 2);
    pred.grad = loss_regression(block_matrix(pred), target).grad;
    auto loss = [&]() { return loss_regression(block_matrix(pred), target).value; };
    const double err = finite_diff_check(loss, {&pred}, 1e-5);
    if (err > tol)
      return {false, "loss_regression grad error " + std::to_string(err)};
  }

  // L_tune over two layers, both modes.
  for (const TuneMode mode : {TuneMode::AllBelow, TuneMode::BoundaryOnly}) {
    ParamBlock tap0("tap0", 3, 2), tap1("tap1", 3, 2);
    std::vector<DenseMatrix> prev{DenseMatrix(3, 2), DenseMatrix(3, 2)};
    for (double& v : tap0.value.data) v = rng.uniform(-1, 1);
    for (double& v : tap1.value.data) v = rng.uniform(-1, 1);
    for (auto& m : prev)
      for (double& v : m.data) v = rng.uniform(-1, 1);
    auto eval = [&]() {
      return loss_tune({block_matrix(tap0), block_matrix(tap1)}, prev, 2, mode);
    };
    const TuneLoss tl = eval();
    tap0.grad = tl.tap_grads[0].size() ? tl.tap_grads[0] : DenseMatrix(3, 2);
    tap1.grad = tl.tap_grads[1].size() ? tl.tap_grads[1] : DenseMatrix(3, 2);
    auto loss = [&]() { return eval().value; };
    const double err = finite_diff_check(loss, {&tap0, &tap1}, 1e-5);
    if (err > tol) return {false, "loss_tune grad error " + std::to_string(err)};
  }

  // L_proj w.r.t. predicted features.
  {
    ParamBlock predicted("predicted", 3, 4);
    DenseMatrix actual(3, 4);
    for (double& v : predicted.value.data) v = rng.uniform(-1, 1);
    for (double& v : actual.data) v = rng.uniform(-1, 1);
    predicted.grad = loss_proj(actual, block_matrix(predicted)).grad;
    auto loss = [&]() { return loss_proj(actual, block_matrix(predicted)).value; };
    const double err = finite_diff_check(loss, {&predicted}, 1e-5);
    if (err > tol) return {false, "loss_proj grad error " + std::to_string(err)};
  }

  // L_reg through the arccos chain, probed away from clamp boundaries.
  {
    ParamBlock features("features", 4, 2);
    features.value = safe_features(4, 2, rng);
    std::vector<double> scores{12.0, 48.0, 71.0, 90.0};
    const DenseMatrix s = score_distance_matrix(scores, 0.0, 100.0);
    const BlockPartition part{2, 2};
    features.grad = loss_reg(block_matrix(features), s, part).feature_grad;
    auto loss = [&]() { return loss_reg(block_matrix(features), s, part).value; };
    const double err = finite_diff_check(loss, {&features}, 1e-6);
    if (err > tol) return {false, "loss_reg grad error " + std::to_string(err)};
  }
  return {true, "all five losses within 1e-4 of central differences"};
}

SuiteResult selftest_ous(std::size_t cases) {
  // Enumeration case: scores 1..10, M=5 -> [2,4,5,7,9].
  Rng init(0xca04);
  ModelConfig mc;
  mc.backbone_widths = {6, 4};
  mc.regressor_hidden = 4;
  mc.projector_hidden = 4;
  ModelState model = make_model(4, mc, init);
  {
    SessionData session;
    session.session_index = 0;
    for (int i = 1; i <= 10; ++i) {
      Sample s;
      s.id = "s" + std::to_string(i);
      s.score = i;
      s.input = {0.1 * i, 0.2, 0.3, 0.4};
      session.train.push_back(s);
    }
    const auto picked = ous_select(session, model, 5);
    const std::vector<double> want{2, 4, 5, 7, 9};
    if (picked.size() != want.size()) return {false, "enumeration size"};
    for (std::size_t i = 0; i < want.size(); ++i)
      if (picked[i].score != want[i])
        return {false, "enumeration case mismatch at " + std::to_string(i)};
  }

  Rng rng(0xca05);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 1 + rng.next_below(30);
    const std::size_t m = 1 + rng.next_below(8);
    SessionData session;
    session.session_index = 1;
    const bool grid = c % 3 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      Sample s;
      s.id = "r" + std::to_string(i);
      s.score = grid ? static_cast<double>(rng.next_below(5))
                     : rng.uniform(0, 100);
      s.input = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                 rng.uniform(-1, 1)};
      session.train.push_back(s);
    }
    const auto picked = ous_select(session, model, m);
    if (picked.empty() || picked.size() > m)
      return {false, "quota violated at case " + std::to_string(c)};
    for (std::size_t i = 1; i < picked.size(); ++i)
      if (picked[i - 1].score > picked[i].score)
        return {false, "unsorted output at case " + std::to_string(c)};

    // one selection per occupied interval, every occupied interval covered
    double lo = session.train[0].score, hi = lo;
    for (const auto& s : session.train) {
      lo = std::min(lo, s.score);
      hi = std::max(hi, s.score);
    }
    const double width = hi - lo;
    auto interval_of = [&](double score) -> std::size_t {
      if (width <= 0.0) return 0;
      const auto k = static_cast<std::size_t>(
          std::floor((score - lo) / width * static_cast<double>(m)));
      return std::min(k, m - 1);
    };
    std::set<std::size_t> occupied, chosen;
    for (const auto& s : session.train) occupied.insert(interval_of(s.score));
    for (const auto& e : picked) chosen.insert(interval_of(e.score));
    if (chosen.size() != picked.size())
      return {false, "duplicate interval at case " + std::to_string(c)};
    if (chosen != occupied)
      return {false, "occupied intervals not covered at case " +
                         std::to_string(c)};
  }
  return {true, std::to_string(cases) + " random sessions hold the contract"};
}

SuiteResult selftest_angular(std::size_t cases) {
  Rng rng(0xca06);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 2 + rng.next_below(7);
    const std::size_t d = 2 + rng.next_below(5);
    DenseMatrix f(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0;
      do {
        norm = 0;
        for (std::size_t k = 0; k < d; ++k) {
          f(i, k) = rng.uniform(-2, 2);
          norm += f(i, k) * f(i, k);
        }
      } while (norm < 1e-6);
    }
    const DenseMatrix a = angular_distance_matrix(f);
    for (std::size_t i = 0; i < n; ++i) {
      if (a(i, i) != 0.0) return {false, "nonzero diagonal"};
      for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(a(i, j) - a(j, i)) > 1e-9) return {false, "asymmetry"};
        if (a(i, j) < 0.0 || a(i, j) > std::numbers::pi)
          return {false, "entry outside [0, pi]"};
      }
    }
    const double scale = std::pow(10.0, rng.uniform(-3, 3));
    DenseMatrix g = f;
    for (double& v : g.data) v *= scale;
    if (max_abs_diff(angular_distance_matrix(g), a) > 1e-9)
      return {false, "positive scaling changed the matrix"};
  }
  return {true, std::to_string(cases) + " random batches hold all properties"};
}

int run_selftest(std::ostream& out, const SelftestOptions& opt) {
  struct Entry {
    const char* name;
    SuiteResult result;
  };
  const Entry entries[] = {
      {"srcc_oracle", selftest_srcc(500, opt.corrupt_srcc_ties)},
      {"davies_bouldin_oracle", selftest_davies_bouldin(200)},
      {"gradient_checks", selftest_gradients()},
      {"ous_contract", selftest_ous(1000)},
      {"angular_properties", selftest_angular(1000)},
  };
  bool all = true;
  std::string failing;
  for (const auto& e : entries) {
    out << e.name << ": " << (e.result.pass ? "PASS" : "FAIL") << " ("
        << e.result.detail << ")\n";
    if (!e.result.pass) {
      all = false;
      failing += std::string(failing.empty() ? "" : ", ") + e.name;
    }
  }
  if (!all) out << "failing suites: " << failing << "\n";
  return all ? 0 : 1;
}

}  // namespace caql
