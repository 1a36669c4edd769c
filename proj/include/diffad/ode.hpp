#ifndef DIFFAD_ODE_HPP
#define DIFFAD_ODE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffad::ode {

enum class Method { rk45, rk23, dop853 };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::rk45: return "rk45";
    case Method::rk23: return "rk23";
    case Method::dop853: return "dop853";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "rk45") return Method::rk45;
  if (s == "rk23") return Method::rk23;
  if (s == "dop853") return Method::dop853;
  throw std::invalid_argument("unknown ODE method '" + s + "' (rk45|rk23|dop853)");
}

struct SolverConfig {
  Method method = Method::rk45;
  double rtol = 1e-3;
  double atol = 1e-3;
  long max_steps = 200000;

  void validate() const {
    auto in_range = [](double t) { return t >= 1e-8 && t <= 1e-1; };
    if (!in_range(rtol) || !in_range(atol))
      throw std::invalid_argument("SolverConfig: tolerances must lie in [1e-8, 1e-1]");
    if (max_steps < 1) throw std::invalid_argument("SolverConfig: max_steps must be >= 1");
  }
};

enum class Status { ok, max_steps_exceeded, non_finite, step_underflow };

struct SolveResult {
  std::vector<double> y;
  Status status = Status::ok;
  long n_rhs = 0;       // right-hand-side evaluations
  long n_accepted = 0;  // accepted steps
  long n_rejected = 0;
  std::string message;

  bool ok() const { return status == Status::ok; }
};

namespace detail {

inline bool finite_all(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double rms(std::span<const double> e, std::span<const double> sc) {
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double q = e[i] / sc[i];
    s += q * q;
  }
  return std::sqrt(s / static_cast<double>(e.size()));
}

inline void error_scale(std::span<const double> y, std::span<const double> ynew, double atol,
                        double rtol, std::span<double> sc) {
  for (std::size_t i = 0; i < y.size(); ++i)
    sc[i] = atol + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
}

// Step-size heuristic for the first step (order = local order of the method).
template <class Rhs>
double initial_step(Rhs&& rhs, double t0, double t1, std::span<const double> y0,
                    std::span<const double> f0, int order, double rtol, double atol, long& n_rhs) {
  const std::size_t n = y0.size();
  double dir = t1 >= t0 ? 1.0 : -1.0;
  double span = std::abs(t1 - t0);

  std::vector<double> sc(n);
  for (std::size_t i = 0; i < n; ++i) sc[i] = atol + rtol * std::abs(y0[i]);
  double d0 = rms(y0, sc);
  double d1 = rms(f0, sc);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);

  std::vector<double> y1(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + dir * h0 * f0[i];
  rhs(t0 + dir * h0, std::span<const double>(y1), std::span<double>(f1));
  ++n_rhs;
  for (std::size_t i = 0; i < n; ++i) f1[i] -= f0[i];
  double d2 = rms(f1, sc) / h0;

  double mx = std::max(d1, d2);
  double h1 = mx <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                          : std::pow(0.01 / mx, 1.0 / static_cast<double>(order));
  return dir * std::min({100.0 * h0, h1, span});
}

struct Controller {
  double expo = 0.2;          // 1/(local order)
  double beta = 0.0;          // Lund stabilization exponent
  double safe = 0.9;          // safety factor
  double facl = 0.2, facr = 10.0;  // min/max step scale per step
  double facold = 1e-4;

  double next_scale(double err, bool accepted, bool was_rejected) {
    double fac11 = std::pow(err, expo - beta * 0.75);
    if (accepted) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(1.0 / facr, std::min(1.0 / facl, fac / safe));
      facold = std::max(err, 1e-4);
      double scale = 1.0 / fac;
      return was_rejected ? std::min(1.0, scale) : scale;
    }
    return 1.0 / std::min(1.0 / facl, fac11 / safe);
  }
};

}  // namespace detail

// Integrates dy/dt = rhs(t, y) from t0 to t1 (either direction).
// Rhs signature: void(double t, std::span<const double> y, std::span<double> dy).
template <class Rhs>
SolveResult integrate(Rhs&& rhs, double t0, double t1, std::vector<double> y0,
                      const SolverConfig& cfg) {
  cfg.validate();
  const std::size_t n = y0.size();
  if (n == 0) throw std::invalid_argument("integrate: empty state");

  SolveResult res;
  res.y = std::move(y0);
  if (t0 == t1) return res;

  const double dir = t1 > t0 ? 1.0 : -1.0;

  int n_stage = 0, order = 0;
  switch (cfg.method) {
    case Method::rk45: n_stage = 7, order = 5; break;
    case Method::rk23: n_stage = 4, order = 3; break;
    case Method::dop853: n_stage = 12, order = 8; break;
  }

  std::vector<std::vector<double>> k(n_stage, std::vector<double>(n));
  std::vector<double> ynew(n), ytmp(n), err_v(n), err3_v(n), sc(n);

  auto eval = [&](double t, std::span<const double> y, std::span<double> dy) {
    rhs(t, y, dy);
    ++res.n_rhs;
  };

  eval(t0, res.y, k[0]);
  double h = detail::initial_step(rhs, t0, t1, res.y, k[0], order, cfg.rtol, cfg.atol, res.n_rhs);

  detail::Controller ctrl;
  switch (cfg.method) {
    case Method::rk45: ctrl = {0.2, 0.04, 0.9, 0.2, 10.0}; break;
    case Method::rk23: ctrl = {1.0 / 3.0, 0.0, 0.9, 0.2, 5.0}; break;
    case Method::dop853: ctrl = {0.125, 0.0, 0.9, 1.0 / 3.0, 6.0}; break;
  }

  double t = t0;
  bool rejected = false;
  long attempts = 0;

  auto stage = [&](int s, double c, std::span<const double> a) {
    // ytmp = y + h * sum_j a[j] k[j]; then k[s] = rhs(t + c h, ytmp)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j)
        if (a[j] != 0.0) acc += a[j] * k[j][i];
      ytmp[i] = res.y[i] + h * acc;
    }
    eval(t + c * h, ytmp, k[s]);
  };

  while ((t1 - t) * dir > 0.0) {
    if (++attempts > cfg.max_steps) {
      res.status = Status::max_steps_exceeded;
      res.message = "exceeded max_steps=" + std::to_string(cfg.max_steps);
      return res;
    }
    if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(t))) {
      res.status = Status::step_underflow;
      res.message = "step size underflow at t=" + std::to_string(t);
      return res;
    }
    bool last = false;
    if ((t + h - t1) * dir >= 0.0) {
      h = t1 - t;
      last = true;
    }

    double err = 0.0;
    if (cfg.method == Method::rk45) {
      constexpr double a2[] = {0.2};
      constexpr double a3[] = {3.0 / 40.0, 9.0 / 40.0};
      constexpr double a4[] = {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0};
      constexpr double a5[] = {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0,
                               -212.0 / 729.0};
      constexpr double a6[] = {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                               -5103.0 / 18656.0};
      constexpr double a7[] = {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0,
                               -2187.0 / 6784.0, 11.0 / 84.0};
      constexpr double e[] = {71.0 / 57600.0, 0.0,           -71.0 / 16695.0, 71.0 / 1920.0,
                              -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0};
      stage(1, 0.2, a2);
      stage(2, 0.3, a3);
      stage(3, 0.8, a4);
      stage(4, 8.0 / 9.0, a5);
      stage(5, 1.0, a6);
      // a7 doubles as the 5th-order weights; ytmp left by stage(6,...) is ynew
      stage(6, 1.0, a7);
      ynew = ytmp;
      for (std::size_t i = 0; i < n; ++i) {
        double ei = 0.0;
        for (int j = 0; j < 7; ++j) ei += e[j] * k[j][i];
        err_v[i] = h * ei;
      }
      detail::error_scale(res.y, ynew, cfg.atol, cfg.rtol, sc);
      err = detail::rms(err_v, sc);
    } else if (cfg.method == Method::rk23) {
      constexpr double a2[] = {0.5};
      constexpr double a3[] = {0.0, 0.75};
      constexpr double a4[] = {2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0};
      constexpr double e[] = {5.0 / 72.0, -1.0 / 12.0, -1.0 / 9.0, 1.0 / 8.0};
      stage(1, 0.5, a2);
      stage(2, 0.75, a3);
      stage(3, 1.0, a4);  // ytmp is the 3rd-order solution; k4 enables FSAL
      ynew = ytmp;
      for (std::size_t i = 0; i < n; ++i) {
        double ei = 0.0;
        for (int j = 0; j < 4; ++j) ei += e[j] * k[j][i];
        err_v[i] = h * ei;
      }
      detail::error_scale(res.y, ynew, cfg.atol, cfg.rtol, sc);
      err = detail::rms(err_v, sc);
    } else {
      // Hairer's 8(5,3) pair: 8th-order solution with a combined 5th/3rd-order
      // error estimate.
      constexpr double c2 = 0.526001519587677318785587544488e-01;
      constexpr double c3 = 0.789002279381515978178381316732e-01;
      constexpr double c4 = 0.118350341907227396726757197510;
      constexpr double c5 = 0.281649658092772603273242802490;
      constexpr double c6 = 0.333333333333333333333333333333;
      constexpr double c7 = 0.25;
      constexpr double c8 = 0.307692307692307692307692307692;
      constexpr double c9 = 0.651282051282051282051282051282;
      constexpr double c10 = 0.6;
      constexpr double c11 = 0.857142857142857142857142857142;
      constexpr double a2[] = {5.26001519587677318785587544488e-02};
      constexpr double a3[] = {1.97250569845378994544595329183e-02,
                               5.91751709536136983633785987549e-02};
      constexpr double a4[] = {2.95875854768068491816892993775e-02, 0.0,
                               8.87627564304205475450678981324e-02};
      constexpr double a5[] = {2.41365134159266685502369798665e-01, 0.0,
                               -8.84549479328286085344864962717e-01,
                               9.24834003261792059893847445371e-01};
      constexpr double a6[] = {3.7037037037037037037037037037e-02, 0.0, 0.0,
                               1.70828608729473871279604482173e-01,
                               1.25467687566822425016691814123e-01};
      constexpr double a7[] = {3.7109375e-02, 0.0, 0.0, 1.70252211019544039314978060272e-01,
                               6.02165389804559606850219397283e-02, -1.7578125e-02};
      constexpr double a8[] = {3.70920001185047927108779319836e-02, 0.0, 0.0,
                               1.70383925712239993810214054705e-01,
                               1.07262030446373284651809199168e-01,
                               -1.53194377486244017527936158236e-02,
                               8.27378916381402288758473766002e-03};
      constexpr double a9[] = {6.24110958716075717114429577812e-01, 0.0, 0.0,
                               -3.36089262944694129406857109825,
                               -8.68219346841726006818189891453e-01,
                               2.75920996994467083049415600797e+01,
                               2.01540675504778934086186788979e+01,
                               -4.34898841810699588477366255144e+01};
      constexpr double a10[] = {4.77662536438264365890433908527e-01, 0.0, 0.0,
                                -2.48811461997166764192642586468,
                                -5.90290826836842996371446475743e-01,
                                2.12300514481811942347288949897e+01,
                                1.52792336328824235832596922938e+01,
                                -3.32882109689848629194453265587e+01,
                                -2.03312017085086261358222928593e-02};
      constexpr double a11[] = {-9.3714243008598732571704021658e-01, 0.0, 0.0,
                                5.18637242884406370830023853209, 1.09143734899672957818500254654,
                                -8.14978701074692612513997267357,
                                -1.85200656599969598641566180701e+01,
                                2.27394870993505042818970056734e+01, 2.49360555267965238987089396762,
                                -3.04676447189821950038236690220};
      constexpr double a12[] = {2.27331014751653820792359768449, 0.0, 0.0,
                                -1.05344954667372501984066689879e+01,
                                -2.00087205822486249909675718444,
                                -1.79589318631187989172765950534e+01,
                                2.79488845294199600508499808837e+01,
                                -2.85899827713502369474065508674,
                                -8.87285693353062954433549289258,
                                1.23605671757943030647266201528e+01,
                                6.43392746015763530355970484046e-01};
      constexpr double b[] = {5.42937341165687622380535766363e-02, 0.0, 0.0, 0.0, 0.0,
                              4.45031289275240888144113950566, 1.89151789931450038304281599044,
                              -5.80120396001058478146721142270, 3.11164366957819894408916062370e-01,
                              -1.52160949662516078556178806805e-01,
                              2.01365400804030348374776537501e-01,
                              4.47106157277725905176885569043e-02};
      constexpr double bhh1 = 0.244094488188976377952755905512;
      constexpr double bhh2 = 0.733846688281611857341361741547;
      constexpr double bhh3 = 0.220588235294117647058823529412e-01;
      constexpr double er[] = {0.1312004499419488073250102996e-01, 0.0, 0.0, 0.0, 0.0,
                               -0.1225156446376204440720569753e+01,
                               -0.4957589496572501915214079952,
                               0.1664377182454986536961530415e+01, -0.3503288487499736816886487290,
                               0.3341791187130174790297318841, 0.8192320648511571246570742613e-01,
                               -0.2235530786388629525884427845e-01};
      stage(1, c2, a2);
      stage(2, c3, a3);
      stage(3, c4, a4);
      stage(4, c5, a5);
      stage(5, c6, a6);
      stage(6, c7, a7);
      stage(7, c8, a8);
      stage(8, c9, a9);
      stage(9, c10, a10);
      stage(10, c11, a11);
      stage(11, 1.0, a12);
      double err3_acc = 0.0, err5_acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double inc = 0.0, e5 = 0.0;
        for (int j = 0; j < 12; ++j) {
          inc += b[j] * k[j][i];
          e5 += er[j] * k[j][i];
        }
        ynew[i] = res.y[i] + h * inc;
        err_v[i] = e5;
        err3_v[i] = inc - bhh1 * k[0][i] - bhh2 * k[8][i] - bhh3 * k[11][i];
      }
      detail::error_scale(res.y, ynew, cfg.atol, cfg.rtol, sc);
      for (std::size_t i = 0; i < n; ++i) {
        double q5 = err_v[i] / sc[i], q3 = err3_v[i] / sc[i];
        err5_acc += q5 * q5;
        err3_acc += q3 * q3;
      }
      double deno = err5_acc + 0.01 * err3_acc;
      if (deno <= 0.0) deno = 1.0;
      err = std::abs(h) * err5_acc / std::sqrt(static_cast<double>(n) * deno);
    }

    if (!std::isfinite(err)) {  // overflow inside a trial step: retry smaller
      h *= 0.5;
      rejected = true;
      ++res.n_rejected;
      continue;
    }

    if (err <= 1.0) {
      double scale = ctrl.next_scale(err, true, rejected);
      t = last ? t1 : t + h;
      std::swap(res.y, ynew);
      if (!detail::finite_all(res.y)) {
        res.status = Status::non_finite;
        res.message = "non-finite state at t=" + std::to_string(t);
        return res;
      }
      ++res.n_accepted;
      rejected = false;
      if (cfg.method == Method::rk45 || cfg.method == Method::rk23) {
        std::swap(k[0], k[n_stage - 1]);  // first-same-as-last
      } else if (!last) {
        eval(t, res.y, k[0]);
      }
      h *= scale;
    } else {
      h *= ctrl.next_scale(err, false, rejected);
      rejected = true;
      ++res.n_rejected;
    }
  }
  return res;
}

}  // namespace diffad::ode

#endif
