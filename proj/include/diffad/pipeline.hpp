#ifndef DIFFAD_PIPELINE_HPP
#define DIFFAD_PIPELINE_HPP

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "diffad/anomaly.hpp"
#include "diffad/config.hpp"
#include "diffad/evaluation.hpp"
#include "diffad/trainer.hpp"

namespace diffad {

// The four pipeline commands as library functions. Each consumes a Config,
// writes its artifacts under out_dir, logs progress to `log`, and returns a
// summary struct. Config mistakes raise invalid_argument; I/O and numeric
// failures raise runtime_error. The command-line driver maps those to exit
// codes.
//
// Artifacts:
//   synth     train.csv, test.csv, test_clean.csv
//   train     model.bin, scaler.csv, loss.csv, config.txt
//   detect    anomaly.csv, nfe.csv
//   evaluate  eval.csv
//
// Every CSV starts with "# config <hash>" and "# seed <n>" comment lines so
// a result file can be traced back to the exact settings that produced it.

namespace detail {

inline std::vector<std::string> provenance(const Config& cfg, const char* command) {
  return {std::string("diffad ") + command, "config " + cfg.hash_hex(),
          "seed " + std::to_string(cfg.get_int("seed", 0))};
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

inline std::ofstream open_out(const std::string& path, const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const std::string& c : comments) out << "# " << c << "\n";
  return out;
}

}  // namespace detail

inline VpSde sde_from_config(const Config& cfg) {
  return VpSde(cfg.get_double("sde.beta_min", 0.1), cfg.get_double("sde.beta_max", 20.0),
               cfg.get_double("sde.t_eps", 1e-5));
}

inline ode::SolverConfig solver_from_config(const Config& cfg) {
  ode::SolverConfig sc;
  std::string m = cfg.get_string("detect.solver", "rk45");
  if (m == "rk45") sc.method = ode::Method::rk45;
  else if (m == "rk23") sc.method = ode::Method::rk23;
  else if (m == "dop853") sc.method = ode::Method::dop853;
  else throw std::invalid_argument("config: detect.solver must be rk45, rk23 or dop853");
  sc.rtol = cfg.get_double("detect.rtol", 1e-3);
  sc.atol = cfg.get_double("detect.atol", 1e-3);
  sc.max_steps = cfg.get_int("detect.max_steps", sc.max_steps);
  sc.validate();
  return sc;
}

inline TraceEstimator trace_from_config(const Config& cfg) {
  TraceEstimator est;
  std::string m = cfg.get_string("detect.trace", "exact");
  if (m == "exact") est.mode = TraceEstimator::Mode::exact;
  else if (m == "hutchinson") est.mode = TraceEstimator::Mode::hutchinson;
  else throw std::invalid_argument("config: detect.trace must be exact or hutchinson");
  est.n_probes = static_cast<int>(cfg.get_int("detect.probes", est.n_probes));
  est.validate();
  return est;
}

inline ScoreNetConfig scorenet_config_from(const Config& cfg, int features) {
  ScoreNetConfig nc;
  nc.omega = static_cast<int>(cfg.get_int("model.omega", nc.omega));
  nc.m = features;
  nc.n_layer = static_cast<int>(cfg.get_int("model.layers", nc.n_layer));
  nc.n_resnet = static_cast<int>(cfg.get_int("model.resnets", nc.n_resnet));
  nc.channel_width = static_cast<int>(cfg.get_int("model.width", nc.channel_width));
  nc.time_embed_dim = static_cast<int>(cfg.get_int("model.embed", nc.time_embed_dim));
  nc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  nc.validate();
  return nc;
}

inline DetectorConfig detector_config_from(const Config& cfg) {
  DetectorConfig dc;
  dc.tau = cfg.get_double("detect.tau", dc.tau);
  dc.mode = combine_mode_from_name(cfg.get_string("detect.mode", "rpg"));
  if (cfg.has("detect.threshold")) dc.threshold = cfg.get_double("detect.threshold");
  dc.expected_rate = cfg.get_double("detect.expected_rate", dc.expected_rate);
  dc.solver = solver_from_config(cfg);
  dc.trace = trace_from_config(cfg);
  dc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  dc.workers = static_cast<int>(cfg.get_int("workers", 1));
  dc.validate();
  return dc;
}

// ---------------------------------------------------------------------------
// Scaler persistence: one row per feature with its training min and max.

inline void save_scaler(const Scaler& s, const std::vector<std::string>& names,
                        const std::string& path, const std::vector<std::string>& comments) {
  std::ofstream out = detail::open_out(path, comments);
  out << "feature,min,max\n";
  for (int j = 0; j < s.dim(); ++j) {
    std::string name = j < static_cast<int>(names.size()) ? names[j] : "f" + std::to_string(j);
    out << name << "," << format_double(s.mn[j]) << "," << format_double(s.mx[j]) << "\n";
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

inline Scaler load_scaler(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scaler file " + path);
  Scaler s;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      if (cells.size() != 3 || cells[0] != "feature" || cells[1] != "min" || cells[2] != "max")
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected header 'feature,min,max'");
      continue;
    }
    double mn, mx;
    if (cells.size() != 3 || !detail::parse_double(cells[1], mn) ||
        !detail::parse_double(cells[2], mx))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed scaler row");
    s.mn.push_back(mn);
    s.mx.push_back(mx);
  }
  if (s.dim() == 0) throw std::runtime_error("scaler file " + path + " has no rows");
  return s;
}

// ---------------------------------------------------------------------------
// synth: write a training series plus a labeled test pair.

struct SynthOutcome {
  std::string train_path, test_path, clean_path;
  int n_anomalous = 0;
};

inline SynthOutcome cmd_synth(const Config& cfg, const std::string& out_dir, std::ostream& log) {
  SynthSpec spec;
  spec.length = static_cast<int>(cfg.get_int("synth.length", spec.length));
  spec.dim = static_cast<int>(cfg.get_int("synth.dim", spec.dim));
  std::string proc = cfg.get_string("synth.process", "ar1");
  if (proc == "ar1") spec.process = SynthSpec::Process::ar1;
  else if (proc == "iid_gaussian") spec.process = SynthSpec::Process::iid_gaussian;
  else throw std::invalid_argument("config: synth.process must be ar1 or iid_gaussian");
  spec.phi = cfg.get_double("synth.phi", spec.phi);
  std::string an = cfg.get_string("synth.anomaly", "spike");
  if (an == "spike") spec.anomaly = SynthSpec::Anomaly::spike;
  else if (an == "level_shift") spec.anomaly = SynthSpec::Anomaly::level_shift;
  else if (an == "none") spec.anomaly = SynthSpec::Anomaly::none;
  else throw std::invalid_argument("config: synth.anomaly must be spike, level_shift or none");
  spec.rate = cfg.get_double("synth.rate", spec.rate);
  spec.magnitude = cfg.get_double("synth.magnitude", spec.magnitude);
  spec.shift_len = static_cast<int>(cfg.get_int("synth.shift_len", spec.shift_len));

  std::uint64_t root = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  auto comments = detail::provenance(cfg, "synth");

  // training realization: a separate clean draw of the same process
  SynthSpec train_spec = spec;
  train_spec.length = static_cast<int>(cfg.get_int("synth.train_length", spec.length));
  train_spec.anomaly = SynthSpec::Anomaly::none;
  train_spec.seed = substream_seed(root, "synth.train", 0);
  train_spec.validate();
  TimeSeries train = generate_synthetic_pair(train_spec).first;

  spec.seed = substream_seed(root, "synth.test", 0);
  spec.validate();
  auto [clean, dirty] = generate_synthetic_pair(spec);

  detail::ensure_dir(out_dir);
  SynthOutcome out;
  out.train_path = out_dir + "/train.csv";
  out.test_path = out_dir + "/test.csv";
  out.clean_path = out_dir + "/test_clean.csv";
  save_csv(train, out.train_path, comments);
  save_csv(dirty, out.test_path, comments);
  save_csv(clean, out.clean_path, comments);
  for (int l : *dirty.labels) out.n_anomalous += l;

  log << "synth: wrote " << train.length() << " training rows and " << dirty.length()
      << " test rows (" << out.n_anomalous << " anomalous) to " << out_dir << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// train: fit the score network on a series and persist everything detection
// needs.

struct TrainOutcome {
  std::string model_path;
  int iterations = 0;
  std::size_t param_count = 0;
  double first_total = 0.0;
  double final_total = 0.0;  // mean over the last 100 iterations
};

inline TrainOutcome cmd_train(const Config& cfg, const std::string& out_dir, std::ostream& log) {
  TimeSeries series = load_csv(cfg.get_string("train.data"));
  detail::ensure_dir(out_dir);

  Scaler scaler = fit_scaler(series);
  series.values = scaler.apply(series.values);

  VpSde sde = sde_from_config(cfg);
  ScoreNetConfig nc = scorenet_config_from(cfg, series.dim());
  ScoreNet net(nc);

  TrainConfig tc;
  tc.n_iter = static_cast<int>(cfg.get_int("train.iterations", 3000));
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch", tc.batch_size));
  tc.learning_rate = cfg.get_double("train.lr", tc.learning_rate);
  tc.grad_clip_norm = cfg.get_double("train.clip", tc.grad_clip_norm);
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  long ckpt = cfg.get_int("train.checkpoint_every", 0);
  if (ckpt > 0) {
    tc.checkpoint_every = static_cast<int>(ckpt);
    tc.checkpoint_dir = out_dir;
  }
  tc.validate();

  long log_every = cfg.get_int("train.log_every", 200);
  auto comments = detail::provenance(cfg, "train");
  std::ofstream loss_out = detail::open_out(out_dir + "/loss.csv", comments);
  loss_out << "iteration,loss_cond,loss_uncond,total\n";

  log << "train: " << series.length() << " rows, " << series.dim() << " features, "
      << net.param_count() << " parameters\n";

  TrainOutcome out;
  out.param_count = net.param_count();
  auto history = train(net, sde, series, tc, [&](const LossReport& r) {
    loss_out << r.iteration << "," << format_double(r.loss_cond) << ","
             << format_double(r.loss_uncond) << "," << format_double(r.total) << "\n";
    if (log_every > 0 && (r.iteration % log_every == 0 || r.iteration == tc.n_iter))
      log << "train: iter " << r.iteration << "/" << tc.n_iter << " objective "
          << format_double(r.total) << "\n";
  });
  if (!loss_out) throw std::runtime_error("write failed for " + out_dir + "/loss.csv");

  out.iterations = static_cast<int>(history.size());
  out.first_total = history.front().total;
  int tail = std::min<int>(100, static_cast<int>(history.size()));
  for (int i = static_cast<int>(history.size()) - tail; i < static_cast<int>(history.size()); ++i)
    out.final_total += history[i].total / tail;

  out.model_path = out_dir + "/model.bin";
  net.save(out.model_path);
  save_scaler(scaler, series.feature_names, out_dir + "/scaler.csv", comments);

  // persist the settings detection needs to rebuild the network
  Config saved = cfg;
  saved.set("model.features", std::to_string(series.dim()));
  saved.save(out_dir + "/config.txt");

  log << "train: done, tail objective " << format_double(out.final_total) << ", model at "
      << out.model_path << "\n";
  return out;
}

// Rebuilds the network and scaler exactly as cmd_train persisted them.
inline ScoreNet load_model_dir(const std::string& dir, Scaler& scaler_out, Config& saved_out) {
  std::string cfg_path = dir + "/config.txt";
  if (!std::filesystem::exists(cfg_path))
    throw std::runtime_error("model directory " + dir + " has no config.txt");
  saved_out = Config::parse_file(cfg_path);
  int features = static_cast<int>(saved_out.get_int("model.features"));
  ScoreNet net(scorenet_config_from(saved_out, features));
  net.load(dir + "/model.bin");
  scaler_out = load_scaler(dir + "/scaler.csv");
  return net;
}

// ---------------------------------------------------------------------------
// detect: score every window of a series against a trained model.

struct DetectOutcome {
  std::string anomaly_path;
  std::size_t n_windows = 0;
  int n_predicted = 0;
  double threshold = 0.0;
  NfeBreakdown nfe;
};

inline DetectOutcome cmd_detect(const Config& cfg, const std::string& out_dir, std::ostream& log) {
  Scaler scaler;
  Config saved;
  ScoreNet net = load_model_dir(cfg.get_string("detect.model_dir"), scaler, saved);

  TimeSeries series = load_csv(cfg.get_string("detect.data"));
  if (series.dim() != net.cols())
    throw std::runtime_error("detect: series has " + std::to_string(series.dim()) +
                             " features but the model expects " + std::to_string(net.cols()));
  series.values = scaler.apply(series.values);

  VpSde sde = sde_from_config(saved);  // the diffusion the model was trained under
  DetectorConfig dc = detector_config_from(cfg);
  detail::ensure_dir(out_dir);

  log << "detect: " << series.length() << " rows, tau " << dc.tau << ", mode "
      << combine_mode_name(dc.mode) << ", workers " << dc.workers << "\n";
  long next_report = 0;
  AnomalySeries result = score_series(net, sde, series, dc, [&](int done, int total) {
    if (done >= next_report || done == total) {
      log << "detect: window " << done << "/" << total << "\n";
      next_report = done + std::max(1, total / 10);
    }
  });

  auto comments = detail::provenance(cfg, "detect");
  comments.push_back("threshold " + format_double(result.threshold));
  std::ofstream out = detail::open_out(out_dir + "/anomaly.csv", comments);
  out << "t,recon,prob,grad,combined,predicted";
  bool labeled = !result.rows.empty() && result.rows.front().label >= 0;
  if (labeled) out << ",label";
  out << "\n";
  DetectOutcome oc;
  for (const AnomalyRow& r : result.rows) {
    out << r.t << "," << format_double(r.recon) << "," << format_double(r.prob) << ","
        << format_double(r.grad) << "," << format_double(r.combined) << "," << r.predicted;
    if (labeled) out << "," << r.label;
    out << "\n";
    oc.n_predicted += r.predicted;
  }
  if (!out) throw std::runtime_error("write failed for " + out_dir + "/anomaly.csv");

  std::ofstream nfe_out = detail::open_out(out_dir + "/nfe.csv", comments);
  nfe_out << "phase,count\n";
  nfe_out << "purify," << result.nfe.purify << "\n";
  nfe_out << "recon," << result.nfe.recon << "\n";
  nfe_out << "prob," << result.nfe.prob << "\n";
  nfe_out << "grad," << result.nfe.grad << "\n";
  nfe_out << "total," << result.nfe.total() << "\n";
  if (!nfe_out) throw std::runtime_error("write failed for " + out_dir + "/nfe.csv");

  oc.anomaly_path = out_dir + "/anomaly.csv";
  oc.n_windows = result.rows.size();
  oc.threshold = result.threshold;
  oc.nfe = result.nfe;
  log << "detect: " << oc.n_windows << " windows, " << oc.n_predicted
      << " flagged, threshold " << format_double(oc.threshold) << ", " << oc.nfe.total()
      << " score evaluations\n";
  return oc;
}

// ---------------------------------------------------------------------------
// evaluate: segment-aware metrics for a scored, labeled series.

struct EvalOutcome {
  std::string eval_path;
  double delta = 0.0;
  EvalSummary summary;
  SweepResult sweep;
};

inline EvalOutcome cmd_evaluate(const Config& cfg, const std::string& out_dir, std::ostream& log) {
  std::string scores_path = cfg.get_string("eval.scores");
  detail::ensure_dir(out_dir);
  TimeSeries scored = load_csv(scores_path);
  if (!scored.labels)
    throw std::runtime_error("evaluate: " + scores_path + " has no label column");

  int combined_idx = -1;
  for (std::size_t j = 0; j < scored.feature_names.size(); ++j)
    if (scored.feature_names[j] == "combined") combined_idx = static_cast<int>(j);
  if (combined_idx < 0)
    throw std::runtime_error("evaluate: " + scores_path + " has no 'combined' column");

  std::vector<double> scores(scored.length());
  for (int i = 0; i < scored.length(); ++i) scores[i] = scored.values(i, combined_idx);
  const std::vector<int>& labels = *scored.labels;

  EvalOutcome oc;
  oc.sweep = best_threshold_sweep(scores, labels,
                                  static_cast<int>(cfg.get_int("eval.grid", 100)));
  oc.delta = cfg.has("eval.threshold") ? cfg.get_double("eval.threshold") : oc.sweep.delta;
  oc.summary = evaluate_scores(scores, labels, oc.delta);

  auto comments = detail::provenance(cfg, "evaluate");
  std::ofstream out = detail::open_out(out_dir + "/eval.csv", comments);
  out << "metric,value\n";
  out << "delta," << format_double(oc.delta) << "\n";
  out << "precision," << format_double(oc.summary.plain.precision) << "\n";
  out << "recall," << format_double(oc.summary.plain.recall) << "\n";
  out << "f1," << format_double(oc.summary.plain.f1) << "\n";
  out << "precision_pa," << format_double(oc.summary.adjusted.precision) << "\n";
  out << "recall_pa," << format_double(oc.summary.adjusted.recall) << "\n";
  out << "f1_pa," << format_double(oc.summary.adjusted.f1) << "\n";
  for (const CurvePoint& p : oc.summary.curve.points) {
    char key[32];
    std::snprintf(key, sizeof(key), "f1_pa_k_%.1f", p.k);
    out << key << "," << format_double(p.f1) << "\n";
  }
  out << "auc_f1_pa_k," << format_double(oc.summary.curve.auc) << "\n";
  out << "best_delta," << format_double(oc.sweep.delta) << "\n";
  out << "best_f1_pa," << format_double(oc.sweep.best_f1_pa) << "\n";
  out << "best_f1," << format_double(oc.sweep.best_f1) << "\n";
  out << "best_auc," << format_double(oc.sweep.best_auc) << "\n";
  if (!out) throw std::runtime_error("write failed for " + out_dir + "/eval.csv");

  oc.eval_path = out_dir + "/eval.csv";
  log << "evaluate: delta " << format_double(oc.delta) << " f1 "
      << format_double(oc.summary.plain.f1) << " f1_pa "
      << format_double(oc.summary.adjusted.f1) << " auc "
      << format_double(oc.summary.curve.auc) << " (best f1_pa "
      << format_double(oc.sweep.best_f1_pa) << " at delta "
      << format_double(oc.sweep.delta) << ")\n";
  return oc;
}

}  // namespace diffad

#endif
