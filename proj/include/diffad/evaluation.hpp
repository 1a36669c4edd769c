#ifndef DIFFAD_EVALUATION_HPP
#define DIFFAD_EVALUATION_HPP

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace diffad {

struct Segment {
  int begin = 0;  // inclusive
  int end = 0;    // inclusive
  int length() const { return end - begin + 1; }
};

// Maximal runs of 1s in the label vector.
inline std::vector<Segment> find_segments(const std::vector<int>& labels) {
  std::vector<Segment> segs;
  int n = static_cast<int>(labels.size());
  int i = 0;
  while (i < n) {
    if (labels[i] != 0) {
      int j = i;
      while (j + 1 < n && labels[j + 1] != 0) ++j;
      segs.push_back({i, j});
      i = j + 1;
    } else {
      ++i;
    }
  }
  return segs;
}

// Segment-aware adjustment: a true segment whose hit fraction exceeds k
// (strictly) counts as fully detected. k = 0 reduces to classic point
// adjustment (any hit claims the run); k = 1 never adjusts, leaving the raw
// predictions. Predictions outside true segments are untouched.
inline std::vector<int> pa_k_adjust(const std::vector<int>& pred, const std::vector<int>& labels,
                                    double k) {
  if (pred.size() != labels.size())
    throw std::invalid_argument("pa_k_adjust: prediction/label length mismatch");
  if (k < 0.0 || k > 1.0) throw std::invalid_argument("pa_k_adjust: k must lie in [0, 1]");
  std::vector<int> out = pred;
  for (const Segment& s : find_segments(labels)) {
    int hits = 0;
    for (int t = s.begin; t <= s.end; ++t) hits += pred[t] != 0 ? 1 : 0;
    double frac = static_cast<double>(hits) / s.length();
    if (frac > k)
      for (int t = s.begin; t <= s.end; ++t) out[t] = 1;
  }
  return out;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf precision_recall_f1(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size())
    throw std::invalid_argument("precision_recall_f1: prediction/label length mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] != 0, l = labels[i] != 0;
    if (p && l) ++tp;
    else if (p) ++fp;
    else if (l) ++fn;
  }
  Prf out;
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn > 0) out.recall = static_cast<double>(tp) / (tp + fn);
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

inline std::vector<int> threshold_predictions(const std::vector<double>& scores, double delta) {
  std::vector<int> pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] > delta ? 1 : 0;
  return pred;
}

struct CurvePoint {
  double k = 0.0;
  double f1 = 0.0;
};

struct F1Curve {
  std::vector<CurvePoint> points;  // k = 0, 0.1, ..., 1.0
  double auc = 0.0;                // trapezoid over k
};

inline F1Curve f1_pa_k_curve(const std::vector<double>& scores, const std::vector<int>& labels,
                             double delta) {
  std::vector<int> pred = threshold_predictions(scores, delta);
  F1Curve curve;
  for (int i = 0; i <= 10; ++i) {
    double k = 0.1 * i;
    std::vector<int> adj = pa_k_adjust(pred, labels, k);
    curve.points.push_back({k, precision_recall_f1(adj, labels).f1});
  }
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i)
    curve.auc += 0.5 * (curve.points[i].f1 + curve.points[i + 1].f1) *
                 (curve.points[i + 1].k - curve.points[i].k);
  return curve;
}

struct SweepResult {
  double delta = 0.0;
  double best_f1_pa = 0.0;  // adjusted (k = 0) f1 at the chosen threshold
  double best_f1 = 0.0;     // plain f1 at the chosen threshold
  double best_auc = 0.0;    // full-curve area at the chosen threshold
};

// Evaluates candidate thresholds at evenly spaced score quantiles and keeps
// the one maximizing point-adjusted f1. Ties resolve toward the larger
// threshold (fewer positives).
inline SweepResult best_threshold_sweep(const std::vector<double>& scores,
                                        const std::vector<int>& labels, int n_grid = 100) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("best_threshold_sweep: score/label length mismatch");
  if (scores.empty()) throw std::invalid_argument("best_threshold_sweep: empty score vector");
  if (n_grid < 1) throw std::invalid_argument("best_threshold_sweep: n_grid must be >= 1");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> candidates;
  for (int i = 0; i < n_grid; ++i) {
    double q = static_cast<double>(i) / n_grid;
    std::size_t idx = static_cast<std::size_t>(q * sorted.size());
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    candidates.push_back(sorted[idx]);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  SweepResult best;
  bool first = true;
  for (double delta : candidates) {
    std::vector<int> pred = threshold_predictions(scores, delta);
    std::vector<int> adj = pa_k_adjust(pred, labels, 0.0);
    double f1_pa = precision_recall_f1(adj, labels).f1;
    if (first || f1_pa >= best.best_f1_pa) {
      first = false;
      best.delta = delta;
      best.best_f1_pa = f1_pa;
      best.best_f1 = precision_recall_f1(pred, labels).f1;
    }
  }
  best.best_auc = f1_pa_k_curve(scores, labels, best.delta).auc;
  return best;
}

struct EvalSummary {
  double delta = 0.0;
  Prf plain;     // raw predictions
  Prf adjusted;  // point-adjusted (k = 0)
  F1Curve curve;
};

inline EvalSummary evaluate_scores(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double delta) {
  EvalSummary out;
  out.delta = delta;
  std::vector<int> pred = threshold_predictions(scores, delta);
  out.plain = precision_recall_f1(pred, labels);
  out.adjusted = precision_recall_f1(pa_k_adjust(pred, labels, 0.0), labels);
  out.curve = f1_pa_k_curve(scores, labels, delta);
  return out;
}

}  // namespace diffad

#endif
