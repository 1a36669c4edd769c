#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "diffad/matrix.hpp"
#include "diffad/rng.hpp"
#include "diffad/timeseries.hpp"
#include "doctest.h"

using namespace diffad;

TEST_CASE("substreams are deterministic and independent") {
  auto a1 = make_rng(42, "stream", 5);
  auto a2 = make_rng(42, "stream", 5);
  CHECK(a1() == a2());

  auto b = make_rng(42, "stream", 6);
  auto c = make_rng(42, "other", 5);
  auto a3 = make_rng(42, "stream", 5);
  std::uint64_t first = a3();
  CHECK(first != b());
  CHECK(first != c());
}

TEST_CASE("matrix arithmetic and norms") {
  Mat a(2, 2);
  a(0, 0) = 1;
  a(0, 1) = -2;
  a(1, 0) = 3;
  a(1, 1) = -4;
  CHECK(l1_norm(a.flat()) == doctest::Approx(10.0));
  CHECK(sq_norm(a.flat()) == doctest::Approx(30.0));
  Mat b = a * 2.0;
  CHECK(b(1, 1) == doctest::Approx(-8.0));
  CHECK(sq_dist(a, b) == doctest::Approx(30.0));
  CHECK(all_finite(a.flat()));
  a(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK(!all_finite(a.flat()));
}

TEST_CASE("scaler maps train extremes to [0,1] and round-trips") {
  TimeSeries ts;
  ts.values = Mat(3, 2);
  // feature 0 spans [-1, 3]; feature 1 is constant
  ts.values(0, 0) = -1.0;
  ts.values(1, 0) = 3.0;
  ts.values(2, 0) = 1.0;
  for (int i = 0; i < 3; ++i) ts.values(i, 1) = 7.0;

  Scaler s = fit_scaler(ts);
  CHECK(s.mn[0] == -1.0);
  CHECK(s.mx[0] == 3.0);
  Mat scaled = s.apply(ts.values);
  CHECK(scaled(0, 0) == doctest::Approx(0.0));
  CHECK(scaled(1, 0) == doctest::Approx(1.0));
  CHECK(scaled(2, 0) == doctest::Approx(0.5));
  CHECK(scaled(0, 1) == doctest::Approx(0.0));  // constant feature

  Mat back = s.invert(scaled);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(back(i, j) == doctest::Approx(ts.values(i, j)).epsilon(1e-12));

  Mat wrong(2, 3);
  CHECK_THROWS_AS(s.apply(wrong), std::invalid_argument);
}

TEST_CASE("sliding windows cover the tail and share rows with the series") {
  TimeSeries ts;
  ts.values = Mat(15, 2);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 2; ++j) ts.values(i, j) = 10.0 * i + j;

  auto ws = sliding_windows(ts, 10);
  REQUIRE(ws.size() == 5);
  CHECK(ws.front().end_index == 10);
  CHECK(ws.back().end_index == 14);
  for (const auto& w : ws) {
    REQUIRE(w.target.rows == 11);
    REQUIRE(w.condition.rows == 10);
    for (int r = 0; r < 10; ++r)
      for (int j = 0; j < 2; ++j) CHECK(w.condition(r, j) == w.target(r, j));
    for (int r = 0; r <= 10; ++r)
      for (int j = 0; j < 2; ++j)
        CHECK(w.target(r, j) == ts.values(w.end_index - 10 + r, j));
  }
  CHECK_THROWS_AS(sliding_windows(ts, 15), std::invalid_argument);
  CHECK_THROWS_AS(sliding_windows(ts, 0), std::invalid_argument);
}

TEST_CASE("csv round trip preserves values, labels and names") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "diffad_test_csv";
  fs::create_directories(dir);
  std::string path = (dir / "rt.csv").string();

  TimeSeries ts;
  ts.values = Mat(4, 2);
  auto rng = make_rng(3, "csv");
  ts.values = randn(4, 2, rng);
  ts.values(2, 1) = 1e-17;  // tiny magnitude must survive the round trip
  ts.labels = std::vector<int>{0, 1, 0, 1};
  ts.feature_names = {"temp", "load"};
  save_csv(ts, path, {"unit-test artifact", "seed=3"});

  TimeSeries back = load_csv(path);
  REQUIRE(back.length() == 4);
  REQUIRE(back.dim() == 2);
  REQUIRE(back.labels.has_value());
  CHECK(back.feature_names[0] == "temp");
  CHECK(back.feature_names[1] == "load");
  for (int i = 0; i < 4; ++i) {
    CHECK((*back.labels)[i] == (*ts.labels)[i]);
    for (int j = 0; j < 2; ++j) CHECK(back.values(i, j) == ts.values(i, j));
  }
}

TEST_CASE("csv loader reports bad cells with line numbers and rejects junk") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "diffad_test_csv";
  fs::create_directories(dir);
  std::string path = (dir / "bad.csv").string();
  {
    std::ofstream out(path);
    out << "# comment\na,b\n1.0,2.0\n3.0,oops\n";
  }
  try {
    load_csv(path);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }
  CHECK_THROWS(load_csv((dir / "missing.csv").string()));
  {
    std::ofstream out((dir / "ragged.csv").string());
    out << "1,2\n1,2,3\n";
  }
  CHECK_THROWS(load_csv((dir / "ragged.csv").string()));
}

TEST_CASE("headerless numeric csv is accepted") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "diffad_test_csv";
  fs::create_directories(dir);
  std::string path = (dir / "plain.csv").string();
  {
    std::ofstream out(path);
    out << "1.5,2.5\n-1,0.25\n";
  }
  TimeSeries ts = load_csv(path);
  CHECK(ts.length() == 2);
  CHECK(ts.dim() == 2);
  CHECK(!ts.labels.has_value());
  CHECK(ts.values(1, 0) == -1.0);
}

TEST_CASE("ar1 generator matches its nominal lag-1 autocorrelation") {
  SynthSpec spec;
  spec.length = 10000;
  spec.dim = 1;
  spec.process = SynthSpec::Process::ar1;
  spec.phi = 0.9;
  spec.anomaly = SynthSpec::Anomaly::none;
  spec.seed = 7;
  TimeSeries ts = generate_synthetic(spec);

  double mean = 0.0;
  for (int i = 0; i < ts.length(); ++i) mean += ts.values(i, 0);
  mean /= ts.length();
  double num = 0.0, den = 0.0;
  for (int i = 0; i + 1 < ts.length(); ++i) {
    num += (ts.values(i, 0) - mean) * (ts.values(i + 1, 0) - mean);
  }
  for (int i = 0; i < ts.length(); ++i) {
    double d = ts.values(i, 0) - mean;
    den += d * d;
  }
  double r1 = num / den;
  CHECK(std::abs(r1 - 0.9) < 0.02);

  // innovation scaling keeps the stationary variance near 1
  CHECK(den / ts.length() == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("spike injection labels match the perturbed positions") {
  SynthSpec spec;
  spec.length = 10000;
  spec.dim = 2;
  spec.process = SynthSpec::Process::ar1;
  spec.anomaly = SynthSpec::Anomaly::spike;
  spec.rate = 0.05;
  spec.magnitude = 5.0;
  spec.seed = 11;
  auto [clean, dirty] = generate_synthetic_pair(spec);

  REQUIRE(dirty.labels.has_value());
  int n_pos = 0;
  for (int i = 0; i < spec.length; ++i) {
    int changed = 0;
    for (int j = 0; j < spec.dim; ++j)
      if (dirty.values(i, j) != clean.values(i, j)) ++changed;
    if ((*dirty.labels)[i]) {
      ++n_pos;
      CHECK(changed == 1);
      double diff = 0.0;
      for (int j = 0; j < spec.dim; ++j) diff += std::abs(dirty.values(i, j) - clean.values(i, j));
      CHECK(diff == doctest::Approx(spec.magnitude));
    } else {
      CHECK(changed == 0);
    }
  }
  double frac = static_cast<double>(n_pos) / spec.length;
  CHECK(std::abs(frac - spec.rate) < 0.015);
}

TEST_CASE("level shifts produce labeled runs") {
  SynthSpec spec;
  spec.length = 5000;
  spec.dim = 1;
  spec.anomaly = SynthSpec::Anomaly::level_shift;
  spec.rate = 0.05;
  spec.seed = 13;
  TimeSeries ts = generate_synthetic(spec);
  int n_pos = 0, n_runs = 0;
  for (int i = 0; i < spec.length; ++i) {
    if ((*ts.labels)[i]) {
      ++n_pos;
      if (i == 0 || !(*ts.labels)[i - 1]) ++n_runs;
    }
  }
  CHECK(n_pos > 0);
  CHECK(n_runs >= 2);
  double frac = static_cast<double>(n_pos) / spec.length;
  CHECK(frac > 0.01);
  CHECK(frac < 0.15);
}

TEST_CASE("synthetic spec validation rejects bad parameters") {
  SynthSpec s;
  s.phi = 1.2;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.phi = 0.9;
  s.rate = -0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.rate = 0.05;
  s.length = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
