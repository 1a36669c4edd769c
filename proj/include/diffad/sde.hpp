#ifndef DIFFAD_SDE_HPP
#define DIFFAD_SDE_HPP

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "diffad/matrix.hpp"
#include "diffad/rng.hpp"

namespace diffad {

struct TransitionMoments {
  double mean_coeff;  // multiplies x0
  double std;         // of the added Gaussian noise
};

struct PerturbResult {
  Mat x_l;         // diffused sample
  Mat dsm_target;  // -noise / std, the score-matching regression target
};

// Variance-preserving forward SDE dx = -1/2 beta(l) x dl + sqrt(beta(l)) dW on
// diffusion time l in [t_eps, 1], with linear schedule
// beta(l) = beta_min + l (beta_max - beta_min).
class VpSde {
 public:
  VpSde(double beta_min = 0.1, double beta_max = 20.0, double t_eps = 1e-5)
      : beta_min_(beta_min), beta_max_(beta_max), t_eps_(t_eps) {
    if (beta_min <= 0.0 || beta_max <= beta_min)
      throw std::invalid_argument("VpSde: need 0 < beta_min < beta_max");
    if (t_eps <= 0.0 || t_eps >= 1.0) throw std::invalid_argument("VpSde: t_eps must lie in (0,1)");
  }

  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }
  double t_eps() const { return t_eps_; }

  double beta(double l) const {
    check_l(l, true);
    return beta_min_ + l * (beta_max_ - beta_min_);
  }

  // Integral of beta from 0 to l, closed form for the linear schedule.
  double beta_integral(double l) const {
    check_l(l, true);
    return beta_min_ * l + 0.5 * l * l * (beta_max_ - beta_min_);
  }

  TransitionMoments transition_moments(double l) const {
    double b = beta_integral(l);
    double mc = std::exp(-0.5 * b);
    return {mc, std::sqrt(std::max(0.0, 1.0 - std::exp(-b)))};
  }

  Mat drift(const Mat& x, double l) const {
    Mat out = x;
    out *= -0.5 * beta(l);
    return out;
  }

  double diffusion(double l) const { return std::sqrt(beta(l)); }

  // Closed-form sample of the transition kernel plus the denoising target.
  // The target -noise/std is undefined at l = 0; callers sample l >= t_eps.
  PerturbResult perturb(const Mat& x0, double l, const Mat& noise) const {
    if (l <= 0.0) throw std::invalid_argument("VpSde::perturb: l must be > 0");
    if (!x0.same_shape(noise)) throw std::invalid_argument("VpSde::perturb: shape mismatch");
    auto [mc, sd] = transition_moments(l);
    if (sd <= 0.0) throw std::invalid_argument("VpSde::perturb: degenerate std at given l");
    PerturbResult r;
    r.x_l = Mat(x0.rows, x0.cols);
    r.dsm_target = Mat(x0.rows, x0.cols);
    for (std::size_t i = 0; i < x0.v.size(); ++i) {
      r.x_l.v[i] = mc * x0.v[i] + sd * noise.v[i];
      r.dsm_target.v[i] = -noise.v[i] / sd;
    }
    return r;
  }

  // Reverse-time SDE drift f - g^2 s, used with its own Brownian term.
  Mat reverse_drift(const Mat& x, const Mat& score, double l) const {
    double b = beta(l);
    Mat out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i)
      out.v[i] = -0.5 * b * x.v[i] - b * score.v[i];
    return out;
  }

  // Deterministic probability-flow field f - 1/2 g^2 s sharing the marginals.
  Mat pf_ode_drift(const Mat& x, const Mat& score, double l) const {
    double b = beta(l);
    Mat out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i)
      out.v[i] = -0.5 * b * (x.v[i] + score.v[i]);
    return out;
  }

  // Log density of the standard-normal terminal distribution.
  double prior_logpdf(std::span<const double> x) const {
    constexpr double half_log_2pi = 0.91893853320467274178;
    double s = 0.0;
    for (double xi : x) s += xi * xi;
    return -0.5 * s - half_log_2pi * static_cast<double>(x.size());
  }

  Mat prior_sample(int rows, int cols, std::mt19937_64& rng) const {
    return randn(rows, cols, rng);
  }

 private:
  // Tolerates sub-ulp overshoot from adaptive steppers landing on an endpoint.
  void check_l(double l, bool allow_zero) const {
    double lo = allow_zero ? 0.0 : t_eps_;
    if (!(l >= lo - 1e-9 && l <= 1.0 + 1e-9))
      throw std::invalid_argument("VpSde: diffusion time " + std::to_string(l) +
                                  " outside [" + std::to_string(lo) + ", 1]");
  }

  double beta_min_, beta_max_, t_eps_;
};

}  // namespace diffad

#endif
