#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "analytic_models.hpp"
#include "diffad/anomaly.hpp"
#include "doctest.h"

using namespace diffad;
using namespace testaux;

namespace {

TimeSeries gaussian_series(int t, int m, std::uint64_t seed) {
  auto rng = make_rng(seed, "series");
  TimeSeries ts;
  ts.values = randn(t, m, rng);
  return ts;
}

Window zero_window(int omega, int m) {
  Window w;
  w.target = Mat(omega + 1, m);
  w.condition = Mat(omega, m);
  w.end_index = omega;
  return w;
}

}  // namespace

TEST_CASE("combine modes multiply exactly the selected scores") {
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::r) == 2.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::p) == 3.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::g) == 4.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::rp) == 6.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::rg) == 8.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::pg) == 12.0);
  CHECK(combine(2.0, 3.0, 4.0, CombineMode::rpg) == 24.0);

  CHECK(all_combine_modes().size() == 7);
  for (CombineMode m : all_combine_modes())
    CHECK(combine_mode_from_name(combine_mode_name(m)) == m);
  CHECK_THROWS_AS(combine_mode_from_name("gr"), std::invalid_argument);

  CHECK(mode_has_prob(CombineMode::pg));
  CHECK(!mode_has_recon(CombineMode::pg));
  CHECK(mode_has_grad(CombineMode::rpg));
}

TEST_CASE("detector config validation") {
  DetectorConfig cfg;
  cfg.validate();  // defaults are legal
  cfg.tau = 0.15;
  cfg.validate();
  cfg.tau = 0.12;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.tau = 0.1;
  cfg.expected_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.expected_rate = 0.05;
  cfg.workers = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("purify at zero strength returns the condition untouched") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  auto rng = make_rng(31, "cond");
  Mat cond = randn(10, 2, rng);
  auto res = purify(model, sde, cond, 0.0, 7, solver_cfg(ode::Method::rk45, 1e-3));
  CHECK(res.x.v == cond.v);
  CHECK(res.nfe.count == 0);

  Mat wrong = randn(9, 2, rng);
  CHECK_THROWS_AS(purify(model, sde, wrong, 0.0, 7, solver_cfg(ode::Method::rk45, 1e-3)),
                  std::invalid_argument);
}

TEST_CASE("purify under the stationary field is the closed-form perturbation") {
  // the flow leg is a no-op for this model, so the output must equal the
  // forward perturbation of the zero-padded window restricted to its history
  VpSde sde;
  StationaryNormalModel model{11, 2};
  auto rng = make_rng(33, "cond");
  Mat cond = randn(10, 2, rng);
  auto res = purify(model, sde, cond, 0.25, 55, solver_cfg(ode::Method::rk45, 1e-3));

  Mat padded(11, 2);
  for (int r = 0; r < 10; ++r)
    for (int j = 0; j < 2; ++j) padded(r, j) = cond(r, j);
  auto nrng = make_rng(55, "pdd.noise");
  Mat noise = randn(11, 2, nrng);
  auto pr = sde.perturb(padded, 0.25, noise);
  for (int r = 0; r < 10; ++r)
    for (int j = 0; j < 2; ++j)
      CHECK(res.x(r, j) == doctest::Approx(pr.x_l(r, j)).epsilon(1e-10));
}

TEST_CASE("reconstruction score compares only the window endpoint") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  auto rng = make_rng(35, "w");
  Window w;
  w.target = randn(11, 2, rng);
  w.condition = randn(10, 2, rng);
  w.end_index = 10;

  auto res = recon_score(model, sde, w, w.condition, 77, solver_cfg(ode::Method::rk45, 1e-3));

  // stationary flow reproduces the prior draw of the same substream
  auto prng = make_rng(77, "sample.prior");
  Mat gen = sde.prior_sample(11, 2, prng);
  double expect = 0.0;
  for (int j = 0; j < 2; ++j) {
    double d = gen(10, j) - w.target(10, j);
    expect += d * d;
  }
  CHECK(res.value == doctest::Approx(expect).epsilon(1e-8));
  CHECK(res.nfe.count > 0);
}

TEST_CASE("likelihood score of the zero window under the stationary model") {
  // logp(0) for a standard normal in n dimensions is -(n/2) log(2 pi), so
  // the negated score must be +(n/2) log(2 pi)
  VpSde sde;
  StationaryNormalModel model{11, 2};
  Window w = zero_window(10, 2);
  auto res = prob_score(model, sde, w, w.condition, solver_cfg(ode::Method::rk45, 1e-3), {});
  CHECK(res.value == doctest::Approx(11.0 * std::log(2.0 * M_PI)).epsilon(1e-9));
  CHECK(res.nfe.count > 0);
}

TEST_CASE("gradient score is the l1 mass of the score field") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  auto rng = make_rng(37, "w");
  Window w;
  w.target = randn(11, 2, rng);
  w.condition = randn(10, 2, rng);
  w.end_index = 10;
  auto res = grad_score(model, sde, w, w.condition);
  double expect = 0.0;
  for (double v : w.target.v) expect += std::abs(v);
  CHECK(res.value == doctest::Approx(expect).epsilon(1e-12));
  CHECK(res.nfe.count == 1);
}

TEST_CASE("recombination applies the min-shift only to joint likelihood factors") {
  AnomalySeries s;
  for (int i = 0; i < 4; ++i) {
    AnomalyRow r;
    r.t = i;
    r.recon = 1.0 + i;          // 1 2 3 4
    r.prob = -2.0 + i;          // -2 -1 0 1, min -2
    r.grad = 2.0;
    s.rows.push_back(r);
  }

  recombine(s, CombineMode::p, std::optional<double>{}, 0.25);
  for (int i = 0; i < 4; ++i) CHECK(s.rows[i].combined == -2.0 + i);  // singleton stays raw

  recombine(s, CombineMode::pg, std::optional<double>{}, 0.25);
  for (int i = 0; i < 4; ++i) CHECK(s.rows[i].combined == (i + 0.0) * 2.0);  // shifted by -2

  recombine(s, CombineMode::rg, std::optional<double>{}, 0.25);
  for (int i = 0; i < 4; ++i) CHECK(s.rows[i].combined == (1.0 + i) * 2.0);  // no shift

  recombine(s, CombineMode::rpg, std::optional<double>{}, 0.25);
  for (int i = 0; i < 4; ++i) CHECK(s.rows[i].combined == (1.0 + i) * (i + 0.0) * 2.0);

  // raw likelihood column is never overwritten by the shift
  for (int i = 0; i < 4; ++i) CHECK(s.rows[i].prob == -2.0 + i);
}

TEST_CASE("threshold resolution: percentile fallback and explicit override") {
  AnomalySeries s;
  for (int i = 1; i <= 20; ++i) {
    AnomalyRow r;
    r.recon = static_cast<double>(i);
    r.prob = 1.0;
    r.grad = 1.0;
    s.rows.push_back(r);
  }

  // 95th percentile of {1..20} by nearest rank is 19; strict > flags only 20
  recombine(s, CombineMode::r, std::optional<double>{}, 0.05);
  CHECK(s.threshold == 19.0);
  int flagged = 0;
  for (const AnomalyRow& r : s.rows) flagged += r.predicted;
  CHECK(flagged == 1);
  CHECK(s.rows.back().predicted == 1);

  recombine(s, CombineMode::r, std::optional<double>{10.5}, 0.05);
  CHECK(s.threshold == 10.5);
  flagged = 0;
  for (const AnomalyRow& r : s.rows) flagged += r.predicted;
  CHECK(flagged == 10);
}

TEST_CASE("series scoring is deterministic and independent of worker count") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  TimeSeries ts = gaussian_series(30, 2, 41);
  ts.labels = std::vector<int>(30, 0);
  (*ts.labels)[25] = 1;

  DetectorConfig cfg;
  cfg.tau = 0.05;
  cfg.mode = CombineMode::rpg;
  cfg.seed = 4242;
  cfg.solver = solver_cfg(ode::Method::rk45, 1e-3);
  cfg.workers = 1;

  AnomalySeries a = score_series(model, sde, ts, cfg);
  CHECK(a.rows.size() == 20);
  CHECK(a.rows.front().t == 10);
  CHECK(a.rows.back().t == 29);
  for (const AnomalyRow& r : a.rows) {
    CHECK(std::isfinite(r.combined));
    CHECK(r.recon >= 0.0);
    CHECK(r.grad >= 0.0);
    CHECK(r.label == (r.t == 25 ? 1 : 0));
  }
  CHECK(a.nfe.purify > 0);
  CHECK(a.nfe.recon > 0);
  CHECK(a.nfe.prob > 0);
  CHECK(a.nfe.grad == 20);
  CHECK(a.nfe.total() == a.nfe.purify + a.nfe.recon + a.nfe.prob + a.nfe.grad);

  cfg.workers = 4;
  AnomalySeries b = score_series(model, sde, ts, cfg);
  REQUIRE(b.rows.size() == a.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(b.rows[i].recon == a.rows[i].recon);
    CHECK(b.rows[i].prob == a.rows[i].prob);
    CHECK(b.rows[i].grad == a.rows[i].grad);
    CHECK(b.rows[i].combined == a.rows[i].combined);
    CHECK(b.rows[i].predicted == a.rows[i].predicted);
  }
  CHECK(b.threshold == a.threshold);
  CHECK(b.nfe.total() == a.nfe.total());

  // different seed, different scores
  cfg.seed = 4243;
  AnomalySeries c = score_series(model, sde, ts, cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    if (c.rows[i].recon != a.rows[i].recon) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("series scoring default threshold flags about the expected rate") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  TimeSeries ts = gaussian_series(60, 2, 43);

  DetectorConfig cfg;
  cfg.tau = 0.0;
  cfg.mode = CombineMode::g;  // cheap: no likelihood influence on the product
  cfg.expected_rate = 0.1;
  cfg.seed = 9;
  cfg.solver = solver_cfg(ode::Method::rk45, 1e-2);
  AnomalySeries a = score_series(model, sde, ts, cfg);
  CHECK(a.rows.size() == 50);
  int flagged = 0;
  for (const AnomalyRow& r : a.rows) flagged += r.predicted;
  CHECK(flagged >= 1);
  CHECK(flagged <= 5);  // strict > at the 90th percentile of 50 values
  for (const AnomalyRow& r : a.rows) CHECK(r.label == -1);  // unlabeled input
}

TEST_CASE("progress callback sees every completed window") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  TimeSeries ts = gaussian_series(15, 2, 45);
  DetectorConfig cfg;
  cfg.tau = 0.0;
  cfg.seed = 1;
  cfg.solver = solver_cfg(ode::Method::rk45, 1e-2);
  int calls = 0, last_total = 0, last_done = 0;
  score_series(model, sde, ts, cfg, [&](int d, int n) {
    ++calls;
    last_done = d;
    last_total = n;
  });
  CHECK(calls == 5);
  CHECK(last_done == 5);
  CHECK(last_total == 5);
}

TEST_CASE("scoring failures carry the underlying solver error") {
  VpSde sde;
  ExplosiveModel model{11, 2};
  TimeSeries ts = gaussian_series(13, 2, 47);
  DetectorConfig cfg;
  cfg.tau = 0.0;
  cfg.seed = 1;
  cfg.solver = solver_cfg(ode::Method::rk45, 1e-3);
  cfg.solver.max_steps = 500;
  CHECK_THROWS_WITH_AS(score_series(model, sde, ts, cfg),
                       doctest::Contains("score_series:"), std::runtime_error);

  TimeSeries wrong = gaussian_series(13, 3, 47);
  CHECK_THROWS_AS(score_series(StationaryNormalModel{11, 2}, sde, wrong, cfg),
                  std::invalid_argument);
}

TEST_CASE("consistency probe accepts a matched score/likelihood pair") {
  // exact standard normal: logp(x+e) - logp(x) = -x.e - e.e/2, and the score
  // is -x, so the first-order bound holds with tiny slack
  auto rng = make_rng(51, "x");
  Mat x = randn(11, 2, rng);
  Mat eps = randn(11, 2, rng);
  eps *= 1e-3;
  auto score_at = [](const Mat& m) { return -1.0 * m; };
  auto logp_at = [](const Mat& m) {
    double acc = 0.0;
    for (double v : m.v) acc += -0.5 * v * v - 0.5 * std::log(2.0 * M_PI);
    return acc;
  };
  auto rep = score_log_consistency_core(x, eps, score_at, logp_at, 0.1);
  CHECK(!rep.flagged);
  CHECK(rep.score_norm == doctest::Approx(std::sqrt(sq_norm(x.flat()))));
  CHECK(rep.diff_ratio <= rep.score_norm + 0.1);
}

TEST_CASE("consistency probe flags a score field that contradicts the likelihood") {
  // zero score claims a flat density, but the likelihood drops steeply along
  // the gradient direction
  Mat x(11, 2);
  for (double& v : x.v) v = 5.0;
  Mat eps = x;
  eps *= 1e-3 / std::sqrt(sq_norm(x.flat()));
  auto score_at = [](const Mat& m) { return Mat(m.rows, m.cols); };
  auto logp_at = [](const Mat& m) {
    double acc = 0.0;
    for (double v : m.v) acc += -0.5 * v * v;
    return acc;
  };
  auto rep = score_log_consistency_core(x, eps, score_at, logp_at, 0.1);
  CHECK(rep.flagged);
  CHECK(rep.score_norm == 0.0);
  CHECK(rep.diff_ratio > 20.0);
}

TEST_CASE("consistency wrapper runs against a transported likelihood") {
  VpSde sde;
  StationaryNormalModel model{11, 2};
  auto rng = make_rng(53, "w");
  Window w;
  w.target = randn(11, 2, rng);
  w.condition = randn(10, 2, rng);
  w.end_index = 10;
  auto rep = score_log_consistency_check(model, sde, w, w.condition, 1e-3, 61,
                                         solver_cfg(ode::Method::rk45, 1e-4));
  CHECK(!rep.flagged);
  CHECK(rep.score_norm > 0.0);
}
