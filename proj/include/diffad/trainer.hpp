#ifndef DIFFAD_TRAINER_HPP
#define DIFFAD_TRAINER_HPP

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffad/rng.hpp"
#include "diffad/scorenet.hpp"
#include "diffad/sde.hpp"
#include "diffad/timeseries.hpp"

namespace diffad {

struct TrainConfig {
  int n_iter = 2000;
  int batch_size = 16;
  double learning_rate = 2e-4;
  double grad_clip_norm = 1.0;
  int checkpoint_every = 1000;
  std::string checkpoint_dir;  // empty disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const {
    if (n_iter < 1) throw std::invalid_argument("TrainConfig: n_iter must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (grad_clip_norm <= 0.0)
      throw std::invalid_argument("TrainConfig: grad_clip_norm must be > 0");
    if (checkpoint_every < 1)
      throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
  }
};

struct LossReport {
  int iteration = 0;    // 1-based
  double loss_cond = 0.0;    // unweighted conditional residual
  double loss_uncond = 0.0;  // unweighted unconditional residual
  double total = 0.0;        // time-weighted training objective
};

// Time weighting lambda(l) = std(l)^2 turns the score-matching residual into
// a noise-prediction objective with uniform scale across diffusion times.
inline double weight_lambda(const VpSde& sde, double l) {
  double sd = sde.transition_moments(l).std;
  return sd * sd;
}

namespace detail {

// Shared core: perturb `target`, regress the network output onto -noise/std.
// Returns the unweighted mean-squared residual; when grad is given,
// accumulates d(grad_weight * loss)/d(theta).
inline double dsm_loss(const ScoreNet& net, const VpSde& sde, const Mat& target, const Mat* cond,
                       double l, const Mat& noise, ScoreNet::Workspace& ws,
                       ScoreNet::GradientSet* grad, double grad_weight) {
  PerturbResult pr = sde.perturb(target, l, noise);
  Mat s = net.forward(pr.x_l, cond, l, ws);
  const double numel = static_cast<double>(s.v.size());
  double loss = 0.0;
  Mat resid(s.rows, s.cols);
  for (std::size_t i = 0; i < s.v.size(); ++i) {
    resid.v[i] = s.v[i] - pr.dsm_target.v[i];
    loss += resid.v[i] * resid.v[i];
  }
  loss /= numel;
  if (grad != nullptr) {
    resid *= 2.0 * grad_weight / numel;
    net.backward(ws, resid, *grad);
  }
  return loss;
}

}  // namespace detail

// Conditional branch: the diffused full window, conditioned on its first
// omega rows.
inline double conditional_dsm_loss(const ScoreNet& net, const VpSde& sde, const Window& w,
                                   double l, const Mat& noise, ScoreNet::Workspace& ws,
                                   ScoreNet::GradientSet* grad = nullptr,
                                   double grad_weight = 1.0) {
  return detail::dsm_loss(net, sde, w.target, &w.condition, l, noise, ws, grad, grad_weight);
}

// Unconditional branch: the condition rows padded with one zero row become
// the diffused input, and the condition channels are zeroed. Trains the
// network to model windows without history, which purification relies on.
inline double unconditional_dsm_loss(const ScoreNet& net, const VpSde& sde, const Window& w,
                                     double l, const Mat& noise, ScoreNet::Workspace& ws,
                                     ScoreNet::GradientSet* grad = nullptr,
                                     double grad_weight = 1.0) {
  Mat padded(w.target.rows, w.target.cols);
  for (int r = 0; r < w.condition.rows; ++r)
    for (int j = 0; j < w.condition.cols; ++j) padded(r, j) = w.condition(r, j);
  return detail::dsm_loss(net, sde, padded, nullptr, l, noise, ws, grad, grad_weight);
}

class AdamState {
 public:
  explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  struct GradNorm {
    double raw = 0.0;   // before clipping
    double used = 0.0;  // after clipping
  };

  // In-place global-norm clipping followed by a bias-corrected update.
  GradNorm step(std::vector<double>& theta, std::vector<double>& grad, double lr,
                double clip_norm) {
    if (theta.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("AdamState: size mismatch");
    GradNorm gn;
    gn.raw = std::sqrt(sq_norm(grad));
    gn.used = gn.raw;
    if (gn.raw > clip_norm && gn.raw > 0.0) {
      double scale = clip_norm / gn.raw;
      for (double& g : grad) g *= scale;
      gn.used = clip_norm;
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      theta[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
    return gn;
  }

  int t() const { return t_; }

 private:
  std::vector<double> m_, v_;
  int t_ = 0;
};

// One optimizer step over a random batch: both loss branches share the
// (l, noise) draw per window, and both are weighted by lambda(l).
inline LossReport train_step(ScoreNet& net, const VpSde& sde, const std::vector<Window>& windows,
                             const TrainConfig& cfg, std::mt19937_64& rng, AdamState& adam,
                             ScoreNet::GradientSet& grad, ScoreNet::Workspace& ws) {
  if (windows.empty()) throw std::invalid_argument("train_step: no windows");
  std::fill(grad.begin(), grad.end(), 0.0);
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  std::uniform_real_distribution<double> unif_l(sde.t_eps(), 1.0);

  LossReport rep;
  const double inv_b = 1.0 / cfg.batch_size;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const Window& w = windows[pick(rng)];
    double l = unif_l(rng);
    Mat noise = randn(net.rows(), net.cols(), rng);
    double lam = weight_lambda(sde, l);
    double lc = conditional_dsm_loss(net, sde, w, l, noise, ws, &grad, lam * inv_b);
    double lu = unconditional_dsm_loss(net, sde, w, l, noise, ws, &grad, lam * inv_b);
    rep.loss_cond += lc * inv_b;
    rep.loss_uncond += lu * inv_b;
    rep.total += lam * (lc + lu) * inv_b;
  }
  adam.step(net.mutable_params(), grad, cfg.learning_rate, cfg.grad_clip_norm);
  net.quantize_params_f32();
  return rep;
}

inline std::string checkpoint_path(const std::string& dir, int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/ckpt_%06d.bin", iteration);
  return dir + buf;
}

// Full training loop. Reports every iteration through on_report (may be
// empty); throws if the objective goes non-finite.
inline std::vector<LossReport> train(
    ScoreNet& net, const VpSde& sde, const std::vector<Window>& windows, const TrainConfig& cfg,
    const std::function<void(const LossReport&)>& on_report = {}) {
  cfg.validate();
  if (windows.empty()) throw std::invalid_argument("train: no windows");
  auto rng = make_rng(cfg.seed, "train");
  AdamState adam(net.param_count());
  ScoreNet::GradientSet grad(net.param_count(), 0.0);
  ScoreNet::Workspace ws;

  std::vector<LossReport> history;
  history.reserve(cfg.n_iter);
  for (int it = 1; it <= cfg.n_iter; ++it) {
    LossReport rep = train_step(net, sde, windows, cfg, rng, adam, grad, ws);
    rep.iteration = it;
    if (!std::isfinite(rep.total))
      throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it));
    history.push_back(rep);
    if (on_report) on_report(rep);
    if (!cfg.checkpoint_dir.empty() && it % cfg.checkpoint_every == 0)
      net.save(checkpoint_path(cfg.checkpoint_dir, it));
  }
  return history;
}

inline std::vector<LossReport> train(
    ScoreNet& net, const VpSde& sde, const TimeSeries& series, const TrainConfig& cfg,
    const std::function<void(const LossReport&)>& on_report = {}) {
  return train(net, sde, sliding_windows(series, net.config().omega), cfg, on_report);
}

}  // namespace diffad

#endif
