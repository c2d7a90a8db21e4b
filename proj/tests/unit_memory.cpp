#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "caql/errors.hpp"
#include "caql/memory.hpp"

using namespace caql;

namespace {

ModelState tiny_model(std::uint64_t seed = 2) {
  ModelConfig cfg;
  cfg.backbone_widths = {6, 4};
  cfg.regressor_hidden = 4;
  cfg.projector_hidden = 4;
  Rng rng(seed);
  return make_model(4, cfg, rng);
}

SessionData session_with_scores(const std::vector<double>& scores,
                                std::size_t index = 0) {
  SessionData s;
  s.session_index = index;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    Sample sample;
    sample.id = "s" + std::to_string(i);
    sample.score = scores[i];
    sample.input = {0.1 * static_cast<double>(i), 0.4, -0.2, 0.7};
    s.train.push_back(std::move(sample));
  }
  return s;
}

}  // namespace

TEST_CASE("ous enumeration case: scores 1..10 with M=5") {
  const ModelState model = tiny_model();
  std::vector<double> scores;
  for (int i = 1; i <= 10; ++i) scores.push_back(i);
  const auto picked = ous_select(session_with_scores(scores), model, 5);
  REQUIRE(picked.size() == 5);
  const std::vector<double> want{2, 4, 5, 7, 9};
  for (std::size_t i = 0; i < 5; ++i) CHECK(picked[i].score == want[i]);
}

TEST_CASE("ous keeps everything when samples are scarce and distinct") {
  const ModelState model = tiny_model();
  const auto picked =
      ous_select(session_with_scores({10, 40, 70}), model, 8);
  CHECK(picked.size() == 3);
}

TEST_CASE("ous degenerate range collapses to one entry") {
  const ModelState model = tiny_model();
  const auto picked =
      ous_select(session_with_scores({5, 5, 5, 5}), model, 4);
  CHECK(picked.size() == 1);
}

TEST_CASE("ous error contracts") {
  const ModelState model = tiny_model();
  SessionData empty;
  CHECK_THROWS_AS(ous_select(empty, model, 3), DomainError);
  CHECK_THROWS_AS(ous_select(session_with_scores({1, 2}), model, 0),
                  DomainError);
}

TEST_CASE("ous features come from the current backbone") {
  ModelState model = tiny_model();
  const SessionData session = session_with_scores({10, 50, 90});
  const auto picked = ous_select(session, model, 3);
  DenseMatrix x(1, 4);
  for (const auto& e : picked) {
    const Sample* src = nullptr;
    for (const Sample& s : session.train)
      if (s.id == e.id) src = &s;
    REQUIRE(src != nullptr);
    std::copy(src->input.begin(), src->input.end(), x.data.begin());
    const DenseMatrix h = model.backbone.features(x);
    for (std::size_t k = 0; k < e.feature.size(); ++k)
      CHECK(e.feature[k] == h(0, k));
  }
}

TEST_CASE("bank quota and ordering") {
  MemoryBank bank(3);
  std::vector<MemoryEntry> protos;
  for (int i = 0; i < 3; ++i) {
    MemoryEntry e;
    e.id = "p" + std::to_string(i);
    e.score = 30.0 - i * 10.0;  // unsorted on purpose
    e.origin_session = 0;
    e.feature = {0.1, 0.2};
    protos.push_back(e);
  }
  bank.append_prototypes(protos);
  CHECK(bank.size() == 3);
  CHECK(bank.entries()[0].score == 10.0);  // sorted ascending per session
  CHECK(bank.entries()[2].score == 30.0);

  // same session cannot be appended twice
  CHECK_THROWS_AS(bank.append_prototypes(protos), DomainError);

  // quota enforced
  MemoryBank small(2);
  CHECK_THROWS_AS(small.append_prototypes(protos), DomainError);
}

TEST_CASE("replay batch draws uniformly without replacement") {
  MemoryBank bank(16);
  std::vector<MemoryEntry> protos;
  for (int i = 0; i < 10; ++i) {
    MemoryEntry e;
    e.id = "p" + std::to_string(i);
    e.score = i;
    e.origin_session = 0;
    e.feature = {double(i)};
    protos.push_back(e);
  }
  bank.append_prototypes(protos);

  // exhaustion: more requested than stored returns everything
  Rng rng(1);
  CHECK(bank.sample_batch(99, rng).size() == 10);

  // determinism for a fixed seed
  Rng a(7), b(7);
  const auto da = bank.sample_batch(4, a);
  const auto db = bank.sample_batch(4, b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(da[i].id == db[i].id);

  // no replacement within one draw
  std::map<std::string, int> seen;
  for (const auto& e : da) seen[e.id]++;
  for (const auto& [id, count] : seen) CHECK(count == 1);

  // 10k draws of b1=1: each entry within 3 sigma of uniform
  Rng freq_rng(99);
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    counts[bank.sample_batch(1, freq_rng)[0].id]++;
  const double p = 1.0 / 10.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [id, count] : counts)
    CHECK(std::abs(count - draws * p) < 3 * sigma);
}

TEST_CASE("empty bank yields an empty replay batch") {
  MemoryBank bank(4);
  Rng rng(3);
  CHECK(bank.sample_batch(5, rng).empty());
}

TEST_CASE("refresh applies the projector once per session") {
  ModelState model = tiny_model(11);
  MemoryBank bank(4);
  std::vector<MemoryEntry> protos;
  for (int i = 0; i < 3; ++i) {
    MemoryEntry e;
    e.id = "p" + std::to_string(i);
    e.score = 10.0 * i;
    e.origin_session = 0;
    e.feature = {0.5 * i, -0.25 * i, 0.1, 0.9};
    protos.push_back(e);
  }
  bank.append_prototypes(protos);
  const auto before = bank.entries();

  // identity projector: refresh is a no-op on features
  bank.begin_session();
  bank.refresh(model.projector);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    CHECK(bank.entries()[i].feature == before[i].feature);
    CHECK(bank.entries()[i].score == before[i].score);
    CHECK(bank.entries()[i].origin_session == before[i].origin_session);
  }

  // second refresh in the same session is a contract violation
  CHECK_THROWS_AS(bank.refresh(model.projector), StateError);
  bank.begin_session();
  CHECK_NOTHROW(bank.refresh(model.projector));

  // a real (non-identity) projector changes features, preserves scores/order
  Rng rng(5);
  for (double& v : model.projector.net.layers.back().weight.value.data)
    v = rng.uniform(-0.5, 0.5);
  bank.begin_session();
  bank.refresh(model.projector);
  bool moved = false;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (bank.entries()[i].feature != before[i].feature) moved = true;
    CHECK(bank.entries()[i].score == before[i].score);
    CHECK(bank.entries()[i].id == before[i].id);
  }
  CHECK(moved);
}

TEST_CASE("refresh rejects mismatched projector dimensions") {
  ModelState model = tiny_model();
  MemoryBank bank(2);
  MemoryEntry e;
  e.id = "x";
  e.score = 1;
  e.origin_session = 0;
  e.feature = {1.0, 2.0};  // dim 2, projector expects 4
  bank.append_prototypes({e});
  bank.begin_session();
  CHECK_THROWS_AS(bank.refresh(model.projector), StateError);
}

TEST_CASE("bank csv round trip") {
  MemoryBank bank(4);
  for (std::size_t origin = 0; origin < 2; ++origin) {
    std::vector<MemoryEntry> protos;
    for (int i = 0; i < 3; ++i) {
      MemoryEntry e;
      e.id = "o" + std::to_string(origin) + "_" + std::to_string(i);
      e.score = origin * 50.0 + i * 7.0 + 0.123456789;
      e.origin_session = origin;
      e.feature = {0.1 * i, -0.2 * i + 0.01};
      protos.push_back(e);
    }
    bank.append_prototypes(protos);
  }
  const std::string text = bank.export_csv();
  const MemoryBank loaded = MemoryBank::import_csv(text, 4);
  REQUIRE(loaded.size() == bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    CHECK(loaded.entries()[i].score == bank.entries()[i].score);
    CHECK(loaded.entries()[i].origin_session ==
          bank.entries()[i].origin_session);
    CHECK(loaded.entries()[i].feature == bank.entries()[i].feature);
  }
}

TEST_CASE("ous respects quota and interval structure on random sessions") {
  const ModelState model = tiny_model();
  Rng rng(123);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 1 + rng.next_below(25);
    const std::size_t m = 1 + rng.next_below(7);
    std::vector<double> scores(n);
    for (double& v : scores)
      v = c % 3 ? rng.uniform(0, 100) : double(rng.next_below(4));
    const auto picked = ous_select(session_with_scores(scores), model, m);
    CHECK(picked.size() >= 1);
    CHECK(picked.size() <= m);
    for (std::size_t i = 1; i < picked.size(); ++i)
      CHECK(picked[i - 1].score <= picked[i].score);

    // max gap between consecutive picks is bounded when all intervals occupied
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double width = *hi_it - *lo_it;
    if (picked.size() == m && width > 0) {
      for (std::size_t i = 1; i < picked.size(); ++i)
        CHECK(picked[i].score - picked[i - 1].score <=
              2.0 * width / static_cast<double>(m) + 1e-12);
    }
  }
}
