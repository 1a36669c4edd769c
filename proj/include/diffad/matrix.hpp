#ifndef DIFFAD_MATRIX_HPP
#define DIFFAD_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace diffad {

// Dense row-major matrix of doubles. Windows are (rows = time, cols = feature).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c, double init = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, init) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
  }

  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return v.size(); }
  std::span<double> flat() { return v; }
  std::span<const double> flat() const { return v; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  Mat& operator+=(const Mat& o) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  Mat& operator-=(const Mat& o) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
    return *this;
  }
  Mat& operator*=(double s) {
    for (double& x : v) x *= s;
    return *this;
  }
};

inline Mat operator+(Mat a, const Mat& b) { return a += b; }
inline Mat operator-(Mat a, const Mat& b) { return a -= b; }
inline Mat operator*(Mat a, double s) { return a *= s; }
inline Mat operator*(double s, Mat a) { return a *= s; }

inline Mat randn(int rows, int cols, std::mt19937_64& rng) {
  Mat out(rows, cols);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& x : out.v) x = n01(rng);
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sq_norm(std::span<const double> a) { return dot(a, a); }

inline double l1_norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += std::abs(x);
  return s;
}

inline double sq_dist(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return s;
}

inline bool all_finite(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace diffad

#endif
