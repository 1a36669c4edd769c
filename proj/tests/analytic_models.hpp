#ifndef DIFFAD_TESTS_ANALYTIC_MODELS_HPP
#define DIFFAD_TESTS_ANALYTIC_MODELS_HPP

#include <cmath>
#include <vector>

#include "diffad/sampler.hpp"

// Closed-form score fields used as stand-ins for a trained network. They
// satisfy the same interface (rows/cols/score/score_with_jvp) and make every
// downstream quantity analytically checkable.
namespace testaux {

// Score of a distribution that is standard normal at every diffusion time:
// the fixed point of the variance-preserving process. A perfectly trained
// network on iid standard-normal windows converges to this map.
struct StationaryNormalModel {
  int r, c;
  int rows() const { return r; }
  int cols() const { return c; }
  diffad::Mat score(const diffad::Mat& x, const diffad::Mat*, double) const { return -1.0 * x; }
  void score_with_jvp(const diffad::Mat& x, const diffad::Mat*, double,
                      const std::vector<diffad::Mat>& dirs, diffad::Mat& s,
                      std::vector<diffad::Mat>& js) const {
    s = -1.0 * x;
    js.clear();
    for (const diffad::Mat& d : dirs) js.push_back(-1.0 * d);
  }
};

// Exact score field when the data distribution is N(mu, sig0^2 I): the
// diffused marginal stays Gaussian with known moments, so the probability
// flow transports densities exactly and closed-form likelihoods exist.
struct DiagonalGaussianModel {
  int r, c;
  double mu, sig0;
  const diffad::VpSde* sde;

  int rows() const { return r; }
  int cols() const { return c; }

  void moments(double l, double& mean, double& var) const {
    auto tm = sde->transition_moments(std::min(std::max(l, sde->t_eps()), 1.0));
    mean = tm.mean_coeff * mu;
    var = tm.mean_coeff * tm.mean_coeff * sig0 * sig0 + tm.std * tm.std;
  }
  diffad::Mat score(const diffad::Mat& x, const diffad::Mat*, double l) const {
    double mean, var;
    moments(l, mean, var);
    diffad::Mat s(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i) s.v[i] = -(x.v[i] - mean) / var;
    return s;
  }
  void score_with_jvp(const diffad::Mat& x, const diffad::Mat* cond, double l,
                      const std::vector<diffad::Mat>& dirs, diffad::Mat& s,
                      std::vector<diffad::Mat>& js) const {
    s = score(x, cond, l);
    double mean, var;
    moments(l, mean, var);
    js.clear();
    for (const diffad::Mat& d : dirs) js.push_back((-1.0 / var) * d);
  }

  double logpdf_at(double l, const diffad::Mat& x) const {
    double mean, var;
    moments(l, mean, var);
    double acc = 0.0;
    for (double v : x.v) {
      double d = v - mean;
      acc += -0.5 * d * d / var - 0.5 * std::log(2.0 * M_PI * var);
    }
    return acc;
  }
};

// Positive-feedback score that makes the reverse flow stiffen until the
// solver gives up; used to exercise failure reporting.
struct ExplosiveModel {
  int r, c;
  int rows() const { return r; }
  int cols() const { return c; }
  diffad::Mat score(const diffad::Mat& x, const diffad::Mat*, double) const { return 1e6 * x; }
  void score_with_jvp(const diffad::Mat& x, const diffad::Mat*, double,
                      const std::vector<diffad::Mat>& dirs, diffad::Mat& s,
                      std::vector<diffad::Mat>& js) const {
    s = score(x, nullptr, 0.5);
    js.clear();
    for (const diffad::Mat& d : dirs) js.push_back(1e6 * d);
  }
};

inline diffad::ode::SolverConfig solver_cfg(diffad::ode::Method m, double tol) {
  diffad::ode::SolverConfig c;
  c.method = m;
  c.rtol = tol;
  c.atol = tol;
  return c;
}

}  // namespace testaux

#endif
