#ifndef DIFFAD_TIMESERIES_HPP
#define DIFFAD_TIMESERIES_HPP

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "diffad/matrix.hpp"
#include "diffad/rng.hpp"

namespace diffad {

struct TimeSeries {
  Mat values;  // T x m
  std::optional<std::vector<int>> labels;
  std::vector<std::string> feature_names;  // size m (generated if absent in file)

  int length() const { return values.rows; }
  int dim() const { return values.cols; }
};

// One scoring unit at time t: target = rows [t-omega, t], condition = rows
// [t-omega, t-1]. Invariant: condition equals the first omega rows of target.
struct Window {
  Mat target;     // (omega+1) x m
  Mat condition;  // omega x m
  int end_index = 0;
};

struct Scaler {
  std::vector<double> mn, mx;

  int dim() const { return static_cast<int>(mn.size()); }

  double span(int j) const {
    double s = mx[j] - mn[j];
    return s > 0.0 ? s : 1.0;  // constant feature maps to 0 and inverts to mn
  }

  Mat apply(const Mat& x) const {
    if (x.cols != dim()) throw std::invalid_argument("Scaler::apply: feature count mismatch");
    Mat out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mn[j]) / span(j);
    return out;
  }

  Mat invert(const Mat& x) const {
    if (x.cols != dim()) throw std::invalid_argument("Scaler::invert: feature count mismatch");
    Mat out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) * span(j) + mn[j];
    return out;
  }
};

inline Scaler fit_scaler(const TimeSeries& train) {
  if (train.length() == 0) throw std::invalid_argument("fit_scaler: empty series");
  Scaler s;
  s.mn.assign(train.dim(), 0.0);
  s.mx.assign(train.dim(), 0.0);
  for (int j = 0; j < train.dim(); ++j) {
    double lo = train.values(0, j), hi = lo;
    for (int i = 1; i < train.length(); ++i) {
      lo = std::min(lo, train.values(i, j));
      hi = std::max(hi, train.values(i, j));
    }
    s.mn[j] = lo;
    s.mx[j] = hi;
  }
  return s;
}

inline std::vector<Window> sliding_windows(const TimeSeries& series, int omega) {
  if (omega < 1) throw std::invalid_argument("sliding_windows: omega must be >= 1");
  if (series.length() <= omega)
    throw std::invalid_argument("sliding_windows: series shorter than omega+1");
  std::vector<Window> out;
  out.reserve(series.length() - omega);
  for (int t = omega; t < series.length(); ++t) {
    Window w;
    w.end_index = t;
    w.target = Mat(omega + 1, series.dim());
    w.condition = Mat(omega, series.dim());
    for (int r = 0; r <= omega; ++r)
      for (int j = 0; j < series.dim(); ++j) w.target(r, j) = series.values(t - omega + r, j);
    for (int r = 0; r < omega; ++r)
      for (int j = 0; j < series.dim(); ++j) w.condition(r, j) = w.target(r, j);
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV input/output. Lines starting with '#' are comments (output files carry
// a provenance comment on the first line); first non-comment line may be a
// header naming the columns. A column whose name equals label_column holds
// 0/1 anomaly labels.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  for (std::string& s : cells) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    s = (a == std::string::npos) ? std::string() : s.substr(a, b - a + 1);
  }
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

}  // namespace detail

inline TimeSeries load_csv(const std::string& path, const std::string& label_column = "label") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  int label_idx = -1;
  bool header_done = false;
  std::string line;
  int lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() == 1 && cells[0].empty()) continue;

    if (!header_done) {
      header_done = true;
      double tmp;
      if (!detail::parse_double(cells[0], tmp)) {  // header row
        names = cells;
        for (std::size_t j = 0; j < names.size(); ++j)
          if (names[j] == label_column) label_idx = static_cast<int>(j);
        continue;
      }
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!detail::parse_double(cells[j], row[j]))
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": non-numeric cell '" + cells[j] + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  int total_cols = static_cast<int>(rows.front().size());
  if (!names.empty() && static_cast<int>(names.size()) != total_cols)
    throw std::runtime_error("load_csv: header/data column count mismatch in " + path);
  int m = total_cols - (label_idx >= 0 ? 1 : 0);
  if (m < 1) throw std::runtime_error("load_csv: no feature columns in " + path);

  TimeSeries ts;
  ts.values = Mat(static_cast<int>(rows.size()), m);
  if (label_idx >= 0) ts.labels = std::vector<int>(rows.size(), 0);
  for (int i = 0; i < ts.length(); ++i) {
    int jj = 0;
    for (int j = 0; j < total_cols; ++j) {
      if (j == label_idx)
        (*ts.labels)[i] = rows[i][j] != 0.0 ? 1 : 0;
      else
        ts.values(i, jj++) = rows[i][j];
    }
  }
  if (!names.empty()) {
    for (int j = 0; j < total_cols; ++j)
      if (j != label_idx) ts.feature_names.push_back(names[j]);
  } else {
    for (int j = 0; j < m; ++j) ts.feature_names.push_back("f" + std::to_string(j));
  }
  return ts;
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// header_comment lines are emitted first, each prefixed with "# ".
inline void save_csv(const TimeSeries& ts, const std::string& path,
                     const std::vector<std::string>& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  for (const std::string& c : header_comment) out << "# " << c << "\n";
  for (int j = 0; j < ts.dim(); ++j) {
    if (j) out << ",";
    out << (j < static_cast<int>(ts.feature_names.size()) ? ts.feature_names[j]
                                                          : "f" + std::to_string(j));
  }
  if (ts.labels) out << ",label";
  out << "\n";
  for (int i = 0; i < ts.length(); ++i) {
    for (int j = 0; j < ts.dim(); ++j) {
      if (j) out << ",";
      out << format_double(ts.values(i, j));
    }
    if (ts.labels) out << "," << (*ts.labels)[i];
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generator.

struct SynthSpec {
  int length = 2000;
  int dim = 2;
  enum class Process { iid_gaussian, ar1 } process = Process::ar1;
  double phi = 0.9;  // ar1 coefficient; innovation std is sqrt(1-phi^2) so the
                     // stationary process std is 1
  enum class Anomaly { none, spike, level_shift } anomaly = Anomaly::spike;
  double rate = 0.05;      // expected fraction of anomalous timesteps
  double magnitude = 5.0;  // in units of the stationary std
  int shift_len = 10;      // mean level-shift duration
  std::uint64_t seed = 0;

  void validate() const {
    if (length < 2) throw std::invalid_argument("SynthSpec: length must be >= 2");
    if (dim < 1) throw std::invalid_argument("SynthSpec: dim must be >= 1");
    if (process == Process::ar1 && (phi <= -1.0 || phi >= 1.0))
      throw std::invalid_argument("SynthSpec: phi must lie in (-1, 1)");
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("SynthSpec: rate must lie in [0, 1]");
    if (magnitude < 0.0) throw std::invalid_argument("SynthSpec: magnitude must be >= 0");
    if (shift_len < 1) throw std::invalid_argument("SynthSpec: shift_len must be >= 1");
  }
};

// Returns {clean, contaminated}; both share the base process realization, the
// second has anomalies injected and labeled. Useful for purification oracles.
inline std::pair<TimeSeries, TimeSeries> generate_synthetic_pair(const SynthSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.seed, "synth.base");
  std::normal_distribution<double> n01(0.0, 1.0);

  TimeSeries clean;
  clean.values = Mat(spec.length, spec.dim);
  for (int j = 0; j < spec.dim; ++j) clean.feature_names.push_back("f" + std::to_string(j));
  if (spec.process == SynthSpec::Process::iid_gaussian) {
    for (double& x : clean.values.v) x = n01(rng);
  } else {
    double inno = std::sqrt(1.0 - spec.phi * spec.phi);
    for (int j = 0; j < spec.dim; ++j) {
      double prev = n01(rng);  // stationary start
      clean.values(0, j) = prev;
      for (int i = 1; i < spec.length; ++i) {
        prev = spec.phi * prev + inno * n01(rng);
        clean.values(i, j) = prev;
      }
    }
  }

  TimeSeries dirty = clean;
  dirty.labels = std::vector<int>(spec.length, 0);
  auto arng = make_rng(spec.seed, "synth.anomaly");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> feat(0, spec.dim - 1);

  if (spec.anomaly == SynthSpec::Anomaly::spike) {
    for (int i = 0; i < spec.length; ++i) {
      if (u01(arng) < spec.rate) {
        int j = feat(arng);
        double sign = u01(arng) < 0.5 ? -1.0 : 1.0;
        dirty.values(i, j) += sign * spec.magnitude;
        (*dirty.labels)[i] = 1;
      }
    }
  } else if (spec.anomaly == SynthSpec::Anomaly::level_shift) {
    double p_start = spec.rate / spec.shift_len;
    int i = 0;
    while (i < spec.length) {
      if (u01(arng) < p_start) {
        int len = 1 + static_cast<int>(u01(arng) * (2 * spec.shift_len - 1));
        int j = feat(arng);
        double sign = u01(arng) < 0.5 ? -1.0 : 1.0;
        for (int k = i; k < std::min(spec.length, i + len); ++k) {
          dirty.values(k, j) += sign * spec.magnitude;
          (*dirty.labels)[k] = 1;
        }
        i += len;
      } else {
        ++i;
      }
    }
  }
  return {std::move(clean), std::move(dirty)};
}

inline TimeSeries generate_synthetic(const SynthSpec& spec) {
  return generate_synthetic_pair(spec).second;
}

}  // namespace diffad

#endif
