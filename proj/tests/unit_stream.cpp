#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "caql/errors.hpp"
#include "caql/stream.hpp"

using namespace caql;

namespace {

StreamConfig small_config() {
  StreamConfig cfg;
  cfg.grade_count = 5;
  cfg.samples_per_session = 20;
  cfg.session_count = 5;
  cfg.input_dim = 16;
  cfg.test_per_session = 8;
  cfg.seed = 42;
  return cfg;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("session scores stay inside their grade interval") {
  const auto stream = generate_synthetic_stream(small_config());
  REQUIRE(stream.size() == 5);
  for (const auto& session : stream) {
    const double lo = session.score_range.first;
    const double hi = session.score_range.second;
    CHECK(lo == doctest::Approx(20.0 * session.session_index));
    for (const auto* part : {&session.train, &session.test})
      for (const Sample& s : *part) {
        CHECK(s.score >= lo);
        CHECK(s.score < hi);
        CHECK(s.grade == static_cast<int>(session.session_index));
      }
  }
  // session 2 of G=5 on [0,100] lives in [40,60)
  for (const Sample& s : stream[2].train) {
    CHECK(s.score >= 40.0);
    CHECK(s.score < 60.0);
  }
}

TEST_CASE("stream generation is bit-deterministic") {
  const auto a = generate_synthetic_stream(small_config());
  const auto b = generate_synthetic_stream(small_config());
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    REQUIRE(a[t].train.size() == b[t].train.size());
    for (std::size_t i = 0; i < a[t].train.size(); ++i) {
      CHECK(a[t].train[i].id == b[t].train[i].id);
      CHECK(a[t].train[i].score == b[t].train[i].score);
      CHECK(a[t].train[i].input == b[t].train[i].input);
    }
  }
}

TEST_CASE("zero shift keeps the mixing matrix fixed") {
  StreamConfig cfg = small_config();
  cfg.shift_strength = 0.0;
  const DenseMatrix m0 = session_mixing_matrix(cfg, 0);
  for (std::size_t t = 1; t < cfg.session_count; ++t)
    CHECK(max_abs_diff(session_mixing_matrix(cfg, t), m0) == 0.0);
}

TEST_CASE("shift distance grows strictly with the session index") {
  StreamConfig cfg = small_config();
  cfg.shift_strength = 0.5;
  const DenseMatrix m0 = session_mixing_matrix(cfg, 0);
  double prev = 0.0;
  for (std::size_t t = 1; t < cfg.session_count; ++t) {
    DenseMatrix diff = session_mixing_matrix(cfg, t);
    add_inplace(diff, m0, -1.0);
    const double dist = frobenius_norm(diff);
    CHECK(dist > prev);
    prev = dist;
  }
}

TEST_CASE("label fraction keeps ceil(fraction * S) train samples") {
  StreamConfig cfg = small_config();
  cfg.label_fraction = 0.4;
  const auto stream = generate_synthetic_stream(cfg);
  for (const auto& session : stream) CHECK(session.train.size() == 8);
}

TEST_CASE("label noise touches train scores only and stays in the interval") {
  StreamConfig cfg = small_config();
  cfg.label_noise_std = 2.0;  // deliberately large, exercise the clamp
  const auto noisy = generate_synthetic_stream(cfg);
  cfg.label_noise_std = 0.0;
  const auto clean = generate_synthetic_stream(cfg);
  bool any_changed = false;
  for (std::size_t t = 0; t < noisy.size(); ++t) {
    for (std::size_t i = 0; i < noisy[t].train.size(); ++i) {
      if (noisy[t].train[i].score != clean[t].train[i].score)
        any_changed = true;
      CHECK(noisy[t].train[i].score >= noisy[t].score_range.first);
      CHECK(noisy[t].train[i].score < noisy[t].score_range.second);
    }
    for (std::size_t i = 0; i < noisy[t].test.size(); ++i)
      CHECK(noisy[t].test[i].score == clean[t].test[i].score);
  }
  CHECK(any_changed);
}

TEST_CASE("config validation names the offending field") {
  StreamConfig cfg = small_config();
  cfg.grade_count = 1;
  try {
    cfg.validate();
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("stream.G") != std::string::npos);
  }
  cfg = small_config();
  cfg.score_high = cfg.score_low;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.label_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("csv round trip preserves samples") {
  const auto stream = generate_synthetic_stream(small_config());
  const std::string path = temp_path("caql_roundtrip.csv");
  export_stream_csv(stream, path);
  CsvLoadOptions opt;
  opt.grade_count = 5;
  const auto loaded = load_feature_csv(path, opt);
  REQUIRE(loaded.size() == stream.size());
  for (std::size_t t = 0; t < stream.size(); ++t) {
    REQUIRE(loaded[t].train.size() == stream[t].train.size());
    REQUIRE(loaded[t].test.size() == stream[t].test.size());
    for (std::size_t i = 0; i < stream[t].train.size(); ++i) {
      const Sample& a = stream[t].train[i];
      const Sample& b = loaded[t].train[i];
      CHECK(a.id == b.id);
      CHECK(std::abs(a.score - b.score) < 1e-9);
      CHECK(a.grade == b.grade);
      for (std::size_t k = 0; k < a.input.size(); ++k)
        CHECK(std::abs(a.input[k] - b.input[k]) < 1e-9);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("csv loader groups two rows into two sessions") {
  const std::string path = temp_path("caql_two.csv");
  {
    std::ofstream out(path);
    out << "id,session,score,f0,f1\n";
    out << "a,0,12.5,0.1,0.2\n";
    out << "b,1,55.0,0.3,0.4\n";
  }
  CsvLoadOptions opt;
  opt.split = SplitPolicy::HashSplit;
  const auto sessions = load_feature_csv(path, opt);
  REQUIRE(sessions.size() == 2);
  CHECK(sessions[0].train.size() + sessions[0].test.size() == 1);
  CHECK(sessions[1].train.size() + sessions[1].test.size() == 1);
  // grade derives from the configured 5-way partition of [0, 100]
  const Sample& first = sessions[0].train.empty() ? sessions[0].test[0]
                                                  : sessions[0].train[0];
  CHECK(first.grade == 0);
  std::filesystem::remove(path);
}

TEST_CASE("csv loader error contracts cite the row") {
  const std::string path = temp_path("caql_bad.csv");
  auto write_file = [&](const std::string& body) {
    std::ofstream out(path);
    out << body;
  };

  write_file("id,session,score,f0\nx,0,10,nan\n");
  try {
    load_feature_csv(path, {});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  write_file("id,session,score,f0\nx,-3,10,0.5\n");
  CHECK_THROWS_AS(load_feature_csv(path, {}), ParseError);

  write_file("id,session,score,f0\nx,0,10,abc\n");
  CHECK_THROWS_AS(load_feature_csv(path, {}), ParseError);

  write_file("nope,bad,header\n");
  CHECK_THROWS_AS(load_feature_csv(path, {}), ParseError);

  // sessions must be contiguous from zero
  write_file("id,session,score,f0\nx,0,10,0.5\ny,2,20,0.6\n");
  CHECK_THROWS_AS(load_feature_csv(path, {}), ParseError);

  // split column required by policy but absent
  write_file("id,session,score,f0\nx,0,10,0.5\n");
  CsvLoadOptions opt;
  opt.split = SplitPolicy::UseSplitColumn;
  CHECK_THROWS_AS(load_feature_csv(path, opt), ParseError);

  std::filesystem::remove(path);
}

TEST_CASE("hash split is deterministic and roughly 75/25") {
  const std::string path = temp_path("caql_hash.csv");
  {
    std::ofstream out(path);
    out << "id,session,score,f0\n";
    for (int i = 0; i < 400; ++i)
      out << "row" << i << ",0," << (i % 100) << ",0.5\n";
  }
  CsvLoadOptions opt;
  opt.split = SplitPolicy::HashSplit;
  const auto a = load_feature_csv(path, opt);
  const auto b = load_feature_csv(path, opt);
  CHECK(a[0].train.size() == b[0].train.size());
  const double frac =
      static_cast<double>(a[0].train.size()) /
      static_cast<double>(a[0].train.size() + a[0].test.size());
  CHECK(frac > 0.65);
  CHECK(frac < 0.85);
  std::filesystem::remove(path);
}

TEST_CASE("score lift is deterministic in the score alone") {
  const auto a = score_lift(37.5, 0, 100, 16);
  const auto b = score_lift(37.5, 0, 100, 16);
  CHECK(a == b);
  CHECK(a.size() == 16);
  // tiled: second tile repeats the basis
  for (std::size_t k = 0; k < 8; ++k) CHECK(a[k] == a[k + 8]);
}
