#ifndef DIFFAD_ANOMALY_HPP
#define DIFFAD_ANOMALY_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "diffad/sampler.hpp"
#include "diffad/timeseries.hpp"

namespace diffad {

// Which of the three per-window scores multiply into the combined score:
// reconstruction distance, negative log-likelihood, score-field magnitude.
enum class CombineMode { r, p, g, rp, rg, pg, rpg };

inline bool mode_has_recon(CombineMode m) {
  return m == CombineMode::r || m == CombineMode::rp || m == CombineMode::rg ||
         m == CombineMode::rpg;
}
inline bool mode_has_prob(CombineMode m) {
  return m == CombineMode::p || m == CombineMode::rp || m == CombineMode::pg ||
         m == CombineMode::rpg;
}
inline bool mode_has_grad(CombineMode m) {
  return m == CombineMode::g || m == CombineMode::rg || m == CombineMode::pg ||
         m == CombineMode::rpg;
}

inline const char* combine_mode_name(CombineMode m) {
  switch (m) {
    case CombineMode::r: return "r";
    case CombineMode::p: return "p";
    case CombineMode::g: return "g";
    case CombineMode::rp: return "rp";
    case CombineMode::rg: return "rg";
    case CombineMode::pg: return "pg";
    case CombineMode::rpg: return "rpg";
  }
  return "?";
}

inline CombineMode combine_mode_from_name(const std::string& s) {
  for (CombineMode m : {CombineMode::r, CombineMode::p, CombineMode::g, CombineMode::rp,
                        CombineMode::rg, CombineMode::pg, CombineMode::rpg})
    if (s == combine_mode_name(m)) return m;
  throw std::invalid_argument("unknown combine mode '" + s + "' (r|p|g|rp|rg|pg|rpg)");
}

inline const std::vector<CombineMode>& all_combine_modes() {
  static const std::vector<CombineMode> modes{CombineMode::r,  CombineMode::p,  CombineMode::g,
                                              CombineMode::rp, CombineMode::rg, CombineMode::pg,
                                              CombineMode::rpg};
  return modes;
}

struct DetectorConfig {
  double tau = 0.1;
  CombineMode mode = CombineMode::rpg;
  std::optional<double> threshold;  // explicit delta; otherwise percentile policy
  double expected_rate = 0.05;      // percentile = 100 * (1 - expected_rate)
  ode::SolverConfig solver;
  TraceEstimator trace;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    bool on_grid = false;
    for (double t : {0.0, 0.05, 0.1, 0.15, 0.2, 0.25})
      if (std::abs(tau - t) < 1e-9) on_grid = true;
    if (!on_grid)
      throw std::invalid_argument("DetectorConfig: tau must lie on {0, 0.05, ..., 0.25}");
    if (expected_rate <= 0.0 || expected_rate >= 1.0)
      throw std::invalid_argument("DetectorConfig: expected_rate must lie in (0, 1)");
    if (workers < 1) throw std::invalid_argument("DetectorConfig: workers must be >= 1");
    solver.validate();
    trace.validate();
  }
};

// Raw product of the selected scores. Shifting of the likelihood score when
// it is combined with others happens at series level where the minimum is
// known.
inline double combine(double recon, double prob, double grad, CombineMode mode) {
  double acc = 1.0;
  if (mode_has_recon(mode)) acc *= recon;
  if (mode_has_prob(mode)) acc *= prob;
  if (mode_has_grad(mode)) acc *= grad;
  return acc;
}

// ---------------------------------------------------------------------------
// Per-window operations. Each takes an explicit seed so work can be issued in
// any order (or on any worker) with identical results.

// Cleansed history: pad the condition with one zero row, run it through
// diffuse-denoise, keep the first omega rows. Off-manifold spikes in the
// history are pulled back toward the learned distribution before they can
// leak into conditioning.
template <class Model>
SampleResult purify(const Model& model, const VpSde& sde, const Mat& cond, double tau,
                    std::uint64_t seed, const ode::SolverConfig& solver) {
  if (cond.rows != model.rows() - 1 || cond.cols != model.cols())
    throw std::invalid_argument("purify: condition shape mismatch");
  Mat padded(model.rows(), model.cols());
  for (int r = 0; r < cond.rows; ++r)
    for (int j = 0; j < cond.cols; ++j) padded(r, j) = cond(r, j);
  SampleResult full = partial_diffuse_denoise(model, sde, padded, tau, seed, solver);
  SampleResult out;
  out.nfe = full.nfe;
  out.x = Mat(cond.rows, cond.cols);
  for (int r = 0; r < cond.rows; ++r)
    for (int j = 0; j < cond.cols; ++j) out.x(r, j) = full.x(r, j);
  return out;
}

struct ScoredValue {
  double value = 0.0;
  NfeRecord nfe;
};

// Reconstruction distance at the window endpoint: generate one window
// conditioned on the cleansed history and compare only the last row.
template <class Model>
ScoredValue recon_score(const Model& model, const VpSde& sde, const Window& w,
                        const Mat& cleansed, std::uint64_t seed,
                        const ode::SolverConfig& solver) {
  SampleResult gen = sample_pf_ode(model, sde, &cleansed, seed, solver);
  ScoredValue out;
  out.nfe = gen.nfe;
  int last = w.target.rows - 1;
  for (int j = 0; j < w.target.cols; ++j) {
    double d = gen.x(last, j) - w.target(last, j);
    out.value += d * d;
  }
  return out;
}

// Negative log-likelihood of the observed window given the cleansed history.
template <class Model>
ScoredValue prob_score(const Model& model, const VpSde& sde, const Window& w, const Mat& cleansed,
                       const ode::SolverConfig& solver, const TraceEstimator& trace) {
  LikelihoodResult ll = log_likelihood(model, sde, w.target, &cleansed, solver, trace);
  return {-ll.logp, ll.nfe};
}

// l1 magnitude of the score field at the observed window near l = 0: large
// when the window sits off the learned manifold.
template <class Model>
ScoredValue grad_score(const Model& model, const VpSde& sde, const Window& w,
                       const Mat& cleansed) {
  Mat s = model.score(w.target, &cleansed, sde.t_eps());
  return {l1_norm(s.flat()), {1}};
}

// ---------------------------------------------------------------------------
// Whole-series detection.

struct AnomalyRow {
  int t = 0;  // series index of the window endpoint
  double recon = 0.0;
  double prob = 0.0;  // raw negative log-likelihood (no shift)
  double grad = 0.0;
  double combined = 0.0;
  int predicted = 0;
  int label = -1;  // -1 when the series is unlabeled
};

struct NfeBreakdown {
  long purify = 0, recon = 0, prob = 0, grad = 0;
  long total() const { return purify + recon + prob + grad; }
};

struct AnomalySeries {
  std::vector<AnomalyRow> rows;
  double threshold = 0.0;  // applied delta
  NfeBreakdown nfe;
};

// Recomputes the combined column (and threshold) from the stored raw scores.
// The likelihood factor is shifted by the series minimum when it multiplies
// other factors, keeping the product sign-stable; alone it stays raw.
inline void recombine(AnomalySeries& series, CombineMode mode,
                      const std::optional<double>& threshold, double expected_rate) {
  double prob_shift = 0.0;
  bool shift_prob = mode_has_prob(mode) && (mode_has_recon(mode) || mode_has_grad(mode));
  if (shift_prob && !series.rows.empty()) {
    double mn = series.rows.front().prob;
    for (const AnomalyRow& r : series.rows) mn = std::min(mn, r.prob);
    prob_shift = mn;
  }
  for (AnomalyRow& r : series.rows)
    r.combined = combine(r.recon, r.prob - prob_shift, r.grad, mode);

  if (threshold.has_value()) {
    series.threshold = *threshold;
  } else if (series.rows.empty()) {
    series.threshold = 0.0;
  } else {
    std::vector<double> sorted;
    sorted.reserve(series.rows.size());
    for (const AnomalyRow& r : series.rows) sorted.push_back(r.combined);
    std::sort(sorted.begin(), sorted.end());
    double q = 1.0 - expected_rate;
    std::size_t idx = static_cast<std::size_t>(
        std::min<double>(std::ceil(q * sorted.size()), static_cast<double>(sorted.size())));
    series.threshold = sorted[idx > 0 ? idx - 1 : 0];
  }
  for (AnomalyRow& r : series.rows) r.predicted = r.combined > series.threshold ? 1 : 0;
}

// Scores every window of the series. Randomness is keyed per window from
// cfg.seed, so the result is independent of worker count and scheduling.
template <class Model>
AnomalySeries score_series(const Model& model, const VpSde& sde, const TimeSeries& series,
                           const DetectorConfig& cfg,
                           const std::function<void(int, int)>& progress = {}) {
  cfg.validate();
  const int omega = model.rows() - 1;
  if (series.dim() != model.cols())
    throw std::invalid_argument("score_series: feature count does not match the model");
  auto windows = sliding_windows(series, omega);
  const int n = static_cast<int>(windows.size());

  AnomalySeries out;
  out.rows.assign(n, AnomalyRow{});
  std::vector<NfeBreakdown> nfes(n);

  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        const Window& w = windows[i];
        AnomalyRow row;
        row.t = w.end_index;
        if (series.labels) row.label = (*series.labels)[w.end_index];

        TraceEstimator tr = cfg.trace;
        tr.seed = substream_seed(cfg.seed, "detect.trace", static_cast<std::uint64_t>(w.end_index));

        SampleResult cleansed =
            purify(model, sde, w.condition, cfg.tau,
                   substream_seed(cfg.seed, "detect.purify", static_cast<std::uint64_t>(w.end_index)),
                   cfg.solver);
        nfes[i].purify = cleansed.nfe.count;

        ScoredValue rec = recon_score(
            model, sde, w, cleansed.x,
            substream_seed(cfg.seed, "detect.recon", static_cast<std::uint64_t>(w.end_index)),
            cfg.solver);
        row.recon = rec.value;
        nfes[i].recon = rec.nfe.count;

        ScoredValue prb = prob_score(model, sde, w, cleansed.x, cfg.solver, tr);
        row.prob = prb.value;
        nfes[i].prob = prb.nfe.count;

        ScoredValue grd = grad_score(model, sde, w, cleansed.x);
        row.grad = grd.value;
        nfes[i].grad = grd.nfe.count;

        out.rows[i] = row;
        int d = done.fetch_add(1) + 1;
        if (progress) progress(d, n);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) error_message = e.what();
        return;
      }
    }
  };

  if (cfg.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < cfg.workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("score_series: " + error_message);

  for (const NfeBreakdown& b : nfes) {
    out.nfe.purify += b.purify;
    out.nfe.recon += b.recon;
    out.nfe.prob += b.prob;
    out.nfe.grad += b.grad;
  }
  recombine(out, cfg.mode, cfg.threshold, cfg.expected_rate);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostic: a first-order consistency probe between the score field and
// log-likelihood differences. By Cauchy-Schwarz, |logp(x+eps) - logp(x)| /
// ||eps|| cannot exceed the score norm by more than curvature terms; a large
// violation flags a miscalibrated likelihood/score pair. Reports, never
// fails.
struct ConsistencyReport {
  double score_norm = 0.0;   // ||S(x)||_2
  double diff_ratio = 0.0;   // |logp(x+eps) - logp(x)| / ||eps||_2
  double tolerance = 0.0;
  bool flagged = false;
};

template <class ScoreFn, class LogpFn>
ConsistencyReport score_log_consistency_core(const Mat& x, const Mat& eps, ScoreFn&& score_at,
                                             LogpFn&& logp_at, double tolerance) {
  Mat s = score_at(x);
  Mat xp = x;
  xp += eps;
  double d = std::abs(logp_at(xp) - logp_at(x));
  double en = std::sqrt(sq_norm(eps.flat()));
  ConsistencyReport rep;
  rep.score_norm = std::sqrt(sq_norm(s.flat()));
  rep.diff_ratio = en > 0.0 ? d / en : 0.0;
  rep.tolerance = tolerance;
  rep.flagged = rep.diff_ratio > rep.score_norm + tolerance;
  return rep;
}

template <class Model>
ConsistencyReport score_log_consistency_check(const Model& model, const VpSde& sde,
                                              const Window& w, const Mat& cleansed,
                                              double eps_scale, std::uint64_t seed,
                                              const ode::SolverConfig& solver,
                                              const TraceEstimator& trace = {}) {
  auto rng = make_rng(seed, "consistency.eps");
  Mat eps = randn(w.target.rows, w.target.cols, rng);
  eps *= eps_scale;
  double tol = 0.1;  // curvature slack; diagnostic only
  return score_log_consistency_core(
      w.target, eps,
      [&](const Mat& x) { return model.score(x, &cleansed, sde.t_eps()); },
      [&](const Mat& x) {
        return log_likelihood(model, sde, x, &cleansed, solver, trace).logp;
      },
      tol + eps_scale);
}

}  // namespace diffad

#endif
