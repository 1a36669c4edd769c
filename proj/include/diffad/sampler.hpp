#ifndef DIFFAD_SAMPLER_HPP
#define DIFFAD_SAMPLER_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffad/matrix.hpp"
#include "diffad/ode.hpp"
#include "diffad/rng.hpp"
#include "diffad/sde.hpp"

namespace diffad {

// Score models plugged into the sampler expose:
//   int rows() const, int cols() const            window shape
//   Mat score(const Mat& x, const Mat* cond, double l) const
//   void score_with_jvp(const Mat& x, const Mat* cond, double l,
//                       const std::vector<Mat>& dirs, Mat& s,
//                       std::vector<Mat>& js) const
// ScoreNet satisfies this; analytic stand-ins are used in tests.

struct TraceEstimator {
  enum class Mode { exact, hutchinson } mode = Mode::exact;
  int n_probes = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_probes < 1) throw std::invalid_argument("TraceEstimator: n_probes must be >= 1");
  }
};

struct NfeRecord {
  long count = 0;  // score-network evaluations (tangent passes not counted)
};

struct SampleResult {
  Mat x;
  NfeRecord nfe;
};

struct LikelihoodResult {
  double logp = 0.0;
  NfeRecord nfe;
};

namespace detail {

inline void throw_solver_failure(const char* what, const ode::SolveResult& res) {
  throw std::runtime_error(std::string(what) + ": " + res.message);
}

// Deterministic probability-flow integration between two diffusion times.
template <class Model>
SampleResult integrate_pf(const Model& model, const VpSde& sde, Mat x, const Mat* cond,
                          double l_from, double l_to, const ode::SolverConfig& solver) {
  solver.validate();
  const int rows = model.rows(), cols = model.cols();
  if (x.rows != rows || x.cols != cols)
    throw std::invalid_argument("integrate_pf: state shape mismatch");

  auto rhs = [&](double l, std::span<const double> y, std::span<double> dy) {
    Mat xm(rows, cols);
    std::copy(y.begin(), y.end(), xm.v.begin());
    Mat s = model.score(xm, cond, l);
    double b = sde.beta(std::min(std::max(l, 0.0), 1.0));
    for (std::size_t i = 0; i < y.size(); ++i) dy[i] = -0.5 * b * (y[i] + s.v[i]);
  };
  ode::SolveResult res = ode::integrate(rhs, l_from, l_to, x.v, solver);
  if (!res.ok()) throw_solver_failure("probability-flow integration failed", res);

  SampleResult out;
  out.x = Mat(rows, cols);
  out.x.v = std::move(res.y);
  out.nfe.count = res.n_rhs;
  return out;
}

}  // namespace detail

// Draws from the model by integrating the probability-flow ODE from the
// standard-normal prior at l=1 down to l=t_eps. Deterministic given the seed.
template <class Model>
SampleResult sample_pf_ode(const Model& model, const VpSde& sde, const Mat* cond,
                           std::uint64_t seed, const ode::SolverConfig& solver) {
  auto rng = make_rng(seed, "sample.prior");
  Mat x1 = sde.prior_sample(model.rows(), model.cols(), rng);
  return detail::integrate_pf(model, sde, std::move(x1), cond, 1.0, sde.t_eps(), solver);
}

// Euler-Maruyama discretization of the reverse-time SDE with n_steps uniform
// steps from l=1 to l=t_eps. Network evaluations equal n_steps.
template <class Model>
SampleResult sample_reverse_sde(const Model& model, const VpSde& sde, const Mat* cond,
                                std::uint64_t seed, int n_steps = 2000) {
  if (n_steps < 1) throw std::invalid_argument("sample_reverse_sde: n_steps must be >= 1");
  auto rng = make_rng(seed, "sample.reverse_sde");
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat x = sde.prior_sample(model.rows(), model.cols(), rng);

  const double dl = (1.0 - sde.t_eps()) / n_steps;
  SampleResult out;
  for (int k = 0; k < n_steps; ++k) {
    double l = 1.0 - k * dl;
    Mat s = model.score(x, cond, l);
    ++out.nfe.count;
    Mat drift = sde.reverse_drift(x, s, l);
    double g = sde.diffusion(l);
    double noise_scale = g * std::sqrt(dl);
    for (std::size_t i = 0; i < x.v.size(); ++i)
      x.v[i] += -dl * drift.v[i] + noise_scale * n01(rng);
  }
  if (!all_finite(x.flat()))
    throw std::runtime_error("sample_reverse_sde: non-finite state after integration");
  out.x = std::move(x);
  return out;
}

// Divergence of a vector field at a point from its Jacobian-vector products.
// FieldJvp: void(std::span<const double> v, std::span<double> out) evaluating
// J(x) v at the fixed point of interest.
template <class FieldJvp>
double divergence(FieldJvp&& field_jvp, std::size_t dim, const TraceEstimator& est) {
  est.validate();
  std::vector<double> v(dim, 0.0), jv(dim, 0.0);
  if (est.mode == TraceEstimator::Mode::exact) {
    double tr = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      std::fill(v.begin(), v.end(), 0.0);
      v[i] = 1.0;
      field_jvp(std::span<const double>(v), std::span<double>(jv));
      tr += jv[i];
    }
    return tr;
  }
  auto rng = make_rng(est.seed, "hutchinson");
  double acc = 0.0;
  for (int p = 0; p < est.n_probes; ++p) {
    for (double& vi : v) vi = (rng() & 1) ? 1.0 : -1.0;
    field_jvp(std::span<const double>(v), std::span<double>(jv));
    acc += dot(v, jv);
  }
  return acc / est.n_probes;
}

// Exact log-density of a window under the model: the instantaneous
// change-of-variables along the probability flow, integrated from t_eps to 1,
// plus the standard-normal prior density at l=1. The divergence of the flow
// field uses either the full Jacobian trace (one tangent per coordinate) or
// Hutchinson probes which stay fixed for the whole solve so the augmented
// ODE remains smooth.
template <class Model>
LikelihoodResult log_likelihood(const Model& model, const VpSde& sde, const Mat& x0,
                                const Mat* cond, const ode::SolverConfig& solver,
                                const TraceEstimator& trace = {}) {
  solver.validate();
  trace.validate();
  const int rows = model.rows(), cols = model.cols();
  if (x0.rows != rows || x0.cols != cols)
    throw std::invalid_argument("log_likelihood: window shape mismatch");
  const std::size_t n = x0.v.size();

  std::vector<Mat> dirs;
  const bool exact = trace.mode == TraceEstimator::Mode::exact;
  if (exact) {
    dirs.assign(n, Mat(rows, cols));
    for (std::size_t i = 0; i < n; ++i) dirs[i].v[i] = 1.0;
  } else {
    auto rng = make_rng(trace.seed, "hutchinson");
    dirs.assign(trace.n_probes, Mat(rows, cols));
    for (Mat& d : dirs)
      for (double& v : d.v) v = (rng() & 1) ? 1.0 : -1.0;
  }

  Mat s;
  std::vector<Mat> js;
  auto rhs = [&](double l, std::span<const double> y, std::span<double> dy) {
    Mat xm(rows, cols);
    std::copy(y.begin(), y.begin() + n, xm.v.begin());
    model.score_with_jvp(xm, cond, l, dirs, s, js);
    double b = sde.beta(std::min(std::max(l, 0.0), 1.0));
    for (std::size_t i = 0; i < n; ++i) dy[i] = -0.5 * b * (y[i] + s.v[i]);
    double trace_j = 0.0;
    if (exact) {
      for (std::size_t i = 0; i < n; ++i) trace_j += js[i].v[i];
    } else {
      for (std::size_t p = 0; p < dirs.size(); ++p) trace_j += dot(dirs[p].flat(), js[p].flat());
      trace_j /= static_cast<double>(dirs.size());
    }
    dy[n] = -0.5 * b * (static_cast<double>(n) + trace_j);
  };

  std::vector<double> y0(n + 1, 0.0);
  std::copy(x0.v.begin(), x0.v.end(), y0.begin());
  ode::SolveResult res = ode::integrate(rhs, sde.t_eps(), 1.0, std::move(y0), solver);
  if (!res.ok()) detail::throw_solver_failure("likelihood integration failed", res);

  LikelihoodResult out;
  out.logp = sde.prior_logpdf(std::span<const double>(res.y.data(), n)) + res.y[n];
  out.nfe.count = res.n_rhs;
  return out;
}

// Partially diffuses a window to diffusion time tau with the closed-form
// kernel, then deterministically denoises it back through the unconditional
// probability flow. tau = 0 is the identity.
template <class Model>
SampleResult partial_diffuse_denoise(const Model& model, const VpSde& sde, const Mat& xbar,
                                     double tau, std::uint64_t seed,
                                     const ode::SolverConfig& solver) {
  if (tau == 0.0) {
    SampleResult out;
    out.x = xbar;
    return out;
  }
  if (tau < sde.t_eps() || tau > 1.0)
    throw std::invalid_argument("partial_diffuse_denoise: tau must be 0 or lie in [t_eps, 1]");
  auto rng = make_rng(seed, "pdd.noise");
  Mat noise = randn(xbar.rows, xbar.cols, rng);
  PerturbResult pr = sde.perturb(xbar, tau, noise);
  return detail::integrate_pf(model, sde, std::move(pr.x_l), nullptr, tau, sde.t_eps(), solver);
}

}  // namespace diffad

#endif
