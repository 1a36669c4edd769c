#ifndef DIFFAD_SCORENET_HPP
#define DIFFAD_SCORENET_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffad/matrix.hpp"
#include "diffad/rng.hpp"

namespace diffad {

// Conditional score network: a small 1-D convolutional U-net over windows of
// length omega+1 with m features. The diffused target and the (zero-padded)
// condition enter as 2m channels; diffusion time enters through a
// Gaussian-Fourier embedding added per channel inside each residual block.
struct ScoreNetConfig {
  int omega = 10;
  int m = 2;
  int n_layer = 2;        // resolution levels (n_layer-1 downsamples)
  int n_resnet = 1;       // residual blocks per level
  int channel_width = 32;
  int time_embed_dim = 32;
  std::uint64_t seed = 0;

  int seq_len() const { return omega + 1; }

  void validate() const {
    if (omega < 1) throw std::invalid_argument("ScoreNetConfig: omega must be >= 1");
    if (m < 1) throw std::invalid_argument("ScoreNetConfig: m must be >= 1");
    if (n_layer < 2 || n_layer > 4)
      throw std::invalid_argument("ScoreNetConfig: n_layer must lie in [2, 4]");
    if (n_resnet < 1 || n_resnet > 4)
      throw std::invalid_argument("ScoreNetConfig: n_resnet must lie in [1, 4]");
    if (channel_width < 4) throw std::invalid_argument("ScoreNetConfig: channel_width too small");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw std::invalid_argument("ScoreNetConfig: time_embed_dim must be even and >= 2");
    int len = seq_len();
    for (int lev = 1; lev < n_layer; ++lev) len = (len + 1) / 2;
    if (len < 2)
      throw std::invalid_argument("ScoreNetConfig: window too short for n_layer downsamples");
  }
};

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool trainable = true;
};

namespace detail {

// Channel-major activation (ch x len); time series enter time-major and are
// transposed at the boundary.
struct FeatureMap {
  int ch = 0, len = 0;
  std::vector<double> v;

  void resize(int c, int l) {
    ch = c;
    len = l;
    v.assign(static_cast<std::size_t>(c) * l, 0.0);
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  double* row(int c) { return v.data() + static_cast<std::size_t>(c) * len; }
  const double* row(int c) const { return v.data() + static_cast<std::size_t>(c) * len; }
  double& at(int c, int t) { return v[static_cast<std::size_t>(c) * len + t]; }
  double at(int c, int t) const { return v[static_cast<std::size_t>(c) * len + t]; }
};

// Tangents for several directions at once; directions are innermost so the
// convolution inner loop stays contiguous.
struct TangentMap {
  int ch = 0, len = 0, dirs = 0;
  std::vector<double> v;

  void resize(int c, int l, int d) {
    ch = c;
    len = l;
    dirs = d;
    v.assign(static_cast<std::size_t>(c) * l * d, 0.0);
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  double* at(int c, int t) {
    return v.data() + (static_cast<std::size_t>(c) * len + t) * dirs;
  }
  const double* at(int c, int t) const {
    return v.data() + (static_cast<std::size_t>(c) * len + t) * dirs;
  }
};

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_deriv(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

struct ConvSpec {
  int cin, cout, k;
  std::size_t w, b;  // offsets into the flat parameter vector
};
struct NormSpec {
  int ch, groups;
  std::size_t g, b;
};
struct DenseSpec {
  int nin, nout;
  std::size_t w, b;
};

enum class Op { conv, gnorm, silu_act, add_time, pool, upsample, concat, add };

struct Instr {
  Op op;
  int in0 = -1, in1 = -1, out = -1;
  int spec = -1;  // index into the per-op spec vector
};

}  // namespace detail

class ScoreNet {
 public:
  using GradientSet = std::vector<double>;  // flat, indexed via param_table()

  struct Workspace {
    std::vector<detail::FeatureMap> vals;
    std::vector<detail::FeatureMap> gvals;
    std::vector<detail::TangentMap> tvals;
    std::vector<std::vector<double>> aux;  // group-norm statistics per instr
    std::vector<double> fourier, t_pre, t_act, temb, g_temb;
    bool primal_ready = false;
  };

  explicit ScoreNet(const ScoreNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    auto rng = make_rng(cfg_.seed, "scorenet.init");
    build(rng);
    quantize_params_f32();
  }

  const ScoreNetConfig& config() const { return cfg_; }
  int rows() const { return cfg_.seq_len(); }
  int cols() const { return cfg_.m; }

  std::size_t param_count() const { return theta_.size(); }
  const std::vector<double>& params() const { return theta_; }
  std::vector<double>& mutable_params() { return theta_; }
  const std::vector<ParamInfo>& param_table() const { return infos_; }

  // Parameters are stored as float32-representable doubles so checkpoints
  // round-trip exactly; call after any direct mutation.
  void quantize_params_f32() {
    for (double& x : theta_) x = static_cast<double>(static_cast<float>(x));
  }

  // --- time embedding -----------------------------------------------------

  std::vector<double> time_embedding(double l) const {
    Workspace ws;
    compute_time_path(l, ws);
    return ws.temb;
  }

  // --- forward ------------------------------------------------------------

  // x: (omega+1) x m diffused target; cond: omega x m or nullptr for the
  // unconditional branch (zero condition channels). Returns the score
  // estimate with the same shape as x.
  Mat forward(const Mat& x, const Mat* cond, double l, Workspace& ws) const {
    check_inputs(x, cond, l);
    ensure(ws);
    compute_time_path(l, ws);

    detail::FeatureMap& in = ws.vals[0];
    for (int j = 0; j < cfg_.m; ++j)
      for (int t = 0; t < rows(); ++t) in.at(j, t) = x(t, j);
    for (int j = 0; j < cfg_.m; ++j) {
      double* r = in.row(cfg_.m + j);
      for (int t = 0; t < rows(); ++t)
        r[t] = (cond != nullptr && t < cfg_.omega) ? (*cond)(t, j) : 0.0;
    }

    for (std::size_t i = 0; i < instrs_.size(); ++i) run_forward(i, ws);
    ws.primal_ready = true;

    const detail::FeatureMap& out = ws.vals[out_val_];
    Mat s(rows(), cols());
    for (int j = 0; j < cfg_.m; ++j)
      for (int t = 0; t < rows(); ++t) s(t, j) = out.at(j, t);
    return s;
  }

  Mat score(const Mat& x, const Mat* cond, double l) const {
    thread_local Workspace ws;
    return forward(x, cond, l, ws);
  }

  // --- backward -----------------------------------------------------------

  // Accumulates d(loss)/d(theta) into grad for the loss cotangent dL/d(output)
  // given as a (omega+1) x m matrix. Requires a workspace filled by forward.
  void backward(Workspace& ws, const Mat& cotangent, GradientSet& grad) const {
    if (!ws.primal_ready || !shapes_match(ws))
      throw std::logic_error("ScoreNet::backward: run forward first");
    if (cotangent.rows != rows() || cotangent.cols != cols())
      throw std::invalid_argument("ScoreNet::backward: cotangent shape mismatch");
    if (grad.size() != theta_.size()) throw std::invalid_argument("ScoreNet::backward: grad size");

    if (ws.gvals.size() != ws.vals.size()) ws.gvals.resize(ws.vals.size());
    for (std::size_t i = 0; i < ws.gvals.size(); ++i) {
      ws.gvals[i].resize(ws.vals[i].ch, ws.vals[i].len);
    }
    ws.g_temb.assign(cfg_.time_embed_dim, 0.0);

    detail::FeatureMap& gout = ws.gvals[out_val_];
    for (int j = 0; j < cfg_.m; ++j)
      for (int t = 0; t < rows(); ++t) gout.at(j, t) = cotangent(t, j);

    for (std::size_t i = instrs_.size(); i-- > 0;) run_backward(i, ws, grad);
    backward_time_path(ws, grad);
  }

  // --- forward-mode (directional derivatives) ------------------------------

  // Propagates tangents of the diffused target through the network at the
  // primal point recorded in ws: out[d] = J_x(score) * dx[d]. The condition
  // and diffusion time are held fixed.
  void jvp_many(Workspace& ws, const std::vector<Mat>& dx, std::vector<Mat>& out) const {
    if (!ws.primal_ready || !shapes_match(ws))
      throw std::logic_error("ScoreNet::jvp_many: run forward first");
    const int d = static_cast<int>(dx.size());
    if (d == 0) {
      out.clear();
      return;
    }
    for (const Mat& t : dx)
      if (t.rows != rows() || t.cols != cols())
        throw std::invalid_argument("ScoreNet::jvp_many: tangent shape mismatch");

    if (ws.tvals.size() != ws.vals.size()) ws.tvals.resize(ws.vals.size());
    for (std::size_t i = 0; i < ws.tvals.size(); ++i)
      ws.tvals[i].resize(ws.vals[i].ch, ws.vals[i].len, d);

    detail::TangentMap& tin = ws.tvals[0];
    for (int j = 0; j < cfg_.m; ++j)
      for (int t = 0; t < rows(); ++t) {
        double* p = tin.at(j, t);
        for (int q = 0; q < d; ++q) p[q] = dx[q](t, j);
      }
    // condition channels are parameters of the map, not inputs: tangent zero
    for (std::size_t i = 0; i < instrs_.size(); ++i) run_jvp(i, ws);

    out.assign(d, Mat(rows(), cols()));
    const detail::TangentMap& tout = ws.tvals[out_val_];
    for (int j = 0; j < cfg_.m; ++j)
      for (int t = 0; t < rows(); ++t) {
        const double* p = tout.at(j, t);
        for (int q = 0; q < d; ++q) out[q](t, j) = p[q];
      }
  }

  // Primal score and Jacobian-vector products in one call, reusing the
  // forward activations. This is the likelihood hot path.
  void score_with_jvp(const Mat& x, const Mat* cond, double l, const std::vector<Mat>& dirs,
                      Mat& s, std::vector<Mat>& js) const {
    thread_local Workspace ws;
    s = forward(x, cond, l, ws);
    jvp_many(ws, dirs, js);
  }

  // --- checkpoint ---------------------------------------------------------

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ScoreNet::save: cannot open " + path);
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    for (int v : {cfg_.omega, cfg_.m, cfg_.n_layer, cfg_.n_resnet, cfg_.channel_width,
                  cfg_.time_embed_dim})
      write_i32(out, v);
    write_u64(out, cfg_.seed);
    write_u32(out, static_cast<std::uint32_t>(infos_.size()));
    for (const ParamInfo& info : infos_) {
      write_u32(out, static_cast<std::uint32_t>(info.name.size()));
      out.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
      write_u32(out, static_cast<std::uint32_t>(info.shape.size()));
      for (int dim : info.shape) write_i32(out, dim);
      for (std::size_t i = 0; i < info.size; ++i) {
        float f = static_cast<float>(theta_[info.offset + i]);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
    if (!out) throw std::runtime_error("ScoreNet::save: write failed for " + path);
  }

  static ScoreNet load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ScoreNet::load: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("ScoreNet::load: bad magic in " + path);
    std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
      throw std::runtime_error("ScoreNet::load: unsupported version " + std::to_string(version));

    ScoreNetConfig cfg;
    cfg.omega = read_i32(in, path);
    cfg.m = read_i32(in, path);
    cfg.n_layer = read_i32(in, path);
    cfg.n_resnet = read_i32(in, path);
    cfg.channel_width = read_i32(in, path);
    cfg.time_embed_dim = read_i32(in, path);
    cfg.seed = read_u64(in, path);
    ScoreNet net(cfg);

    std::uint32_t n_entries = read_u32(in, path);
    if (n_entries != net.infos_.size())
      throw std::runtime_error("ScoreNet::load: parameter table size mismatch in " + path);
    for (const ParamInfo& info : net.infos_) {
      std::uint32_t name_len = read_u32(in, path);
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      if (!in || name != info.name)
        throw std::runtime_error("ScoreNet::load: parameter name mismatch at '" + info.name +
                                 "' in " + path);
      std::uint32_t ndim = read_u32(in, path);
      if (ndim != info.shape.size())
        throw std::runtime_error("ScoreNet::load: shape rank mismatch at '" + info.name + "'");
      for (int expect : info.shape)
        if (read_i32(in, path) != expect)
          throw std::runtime_error("ScoreNet::load: shape mismatch at '" + info.name + "'");
      for (std::size_t i = 0; i < info.size; ++i) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        if (!in) throw std::runtime_error("ScoreNet::load: truncated file " + path);
        net.theta_[info.offset + i] = static_cast<double>(f);
      }
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error("ScoreNet::load: trailing bytes in " + path);
    return net;
  }

 private:
  static constexpr char kMagic[8] = {'D', 'F', 'A', 'D', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  // ---- construction ------------------------------------------------------

  enum class Init { zeros, ones, he, fourier };

  std::size_t add_param(std::string name, std::vector<int> shape, Init init, int fan_in,
                        std::mt19937_64& rng, bool trainable = true) {
    ParamInfo info;
    info.name = std::move(name);
    info.shape = std::move(shape);
    info.offset = theta_.size();
    info.size = 1;
    for (int d : info.shape) info.size *= static_cast<std::size_t>(d);
    info.trainable = trainable;

    std::normal_distribution<double> n01(0.0, 1.0);
    double he_std = fan_in > 0 ? std::sqrt(2.0 / fan_in) : 0.0;
    for (std::size_t i = 0; i < info.size; ++i) {
      double v = 0.0;
      switch (init) {
        case Init::zeros: v = 0.0; break;
        case Init::ones: v = 1.0; break;
        case Init::he: v = he_std * n01(rng); break;
        case Init::fourier: v = 16.0 * n01(rng); break;
      }
      theta_.push_back(v);
    }
    infos_.push_back(info);
    return info.offset;
  }

  static int pick_groups(int ch) {
    for (int g = 8; g >= 1; --g)
      if (ch % g == 0) return g;
    return 1;
  }

  int add_value(int ch, int len) {
    val_ch_.push_back(ch);
    val_len_.push_back(len);
    return static_cast<int>(val_ch_.size()) - 1;
  }

  int emit(detail::Op op, int in0, int in1, int spec, int ch, int len) {
    int out = add_value(ch, len);
    instrs_.push_back({op, in0, in1, out, spec});
    return out;
  }

  int emit_conv(const std::string& name, int in, int cout, int k, std::mt19937_64& rng,
                bool zero_init = false) {
    detail::ConvSpec cs;
    cs.cin = val_ch_[in];
    cs.cout = cout;
    cs.k = k;
    cs.w = add_param(name + ".w", {cout, cs.cin, k}, zero_init ? Init::zeros : Init::he,
                     cs.cin * k, rng);
    cs.b = add_param(name + ".b", {cout}, Init::zeros, 0, rng);
    conv_specs_.push_back(cs);
    return emit(detail::Op::conv, in, -1, static_cast<int>(conv_specs_.size()) - 1, cout,
                val_len_[in]);
  }

  int emit_gnorm(const std::string& name, int in, std::mt19937_64& rng) {
    detail::NormSpec ns;
    ns.ch = val_ch_[in];
    ns.groups = pick_groups(ns.ch);
    ns.g = add_param(name + ".g", {ns.ch}, Init::ones, 0, rng);
    ns.b = add_param(name + ".b", {ns.ch}, Init::zeros, 0, rng);
    norm_specs_.push_back(ns);
    return emit(detail::Op::gnorm, in, -1, static_cast<int>(norm_specs_.size()) - 1, ns.ch,
                val_len_[in]);
  }

  int emit_silu(int in) {
    return emit(detail::Op::silu_act, in, -1, -1, val_ch_[in], val_len_[in]);
  }

  int emit_add_time(const std::string& name, int in, std::mt19937_64& rng) {
    detail::DenseSpec ds;
    ds.nin = cfg_.time_embed_dim;
    ds.nout = val_ch_[in];
    ds.w = add_param(name + ".w", {ds.nout, ds.nin}, Init::he, ds.nin, rng);
    ds.b = add_param(name + ".b", {ds.nout}, Init::zeros, 0, rng);
    dense_specs_.push_back(ds);
    return emit(detail::Op::add_time, in, -1, static_cast<int>(dense_specs_.size()) - 1,
                val_ch_[in], val_len_[in]);
  }

  int build_resblock(const std::string& name, int in, std::mt19937_64& rng) {
    const int w = cfg_.channel_width;
    int h = emit_gnorm(name + ".gn1", in, rng);
    h = emit_silu(h);
    h = emit_conv(name + ".conv1", h, w, 3, rng);
    h = emit_add_time(name + ".tproj", h, rng);
    h = emit_gnorm(name + ".gn2", h, rng);
    h = emit_silu(h);
    h = emit_conv(name + ".conv2", h, w, 3, rng);
    int skip = in;
    if (val_ch_[in] != w) skip = emit_conv(name + ".skip", in, w, 1, rng);
    return emit(detail::Op::add, h, skip, -1, w, val_len_[h]);
  }

  void build(std::mt19937_64& rng) {
    const int w = cfg_.channel_width;
    const int e = cfg_.time_embed_dim;

    add_param("time_fourier.freq", {e / 2}, Init::fourier, 0, rng, /*trainable=*/false);
    time_d1_.nin = e;
    time_d1_.nout = e;
    time_d1_.w = add_param("time_mlp.d1.w", {e, e}, Init::he, e, rng);
    time_d1_.b = add_param("time_mlp.d1.b", {e}, Init::zeros, 0, rng);
    time_d2_.nin = e;
    time_d2_.nout = e;
    time_d2_.w = add_param("time_mlp.d2.w", {e, e}, Init::he, e, rng);
    time_d2_.b = add_param("time_mlp.d2.b", {e}, Init::zeros, 0, rng);

    int in = add_value(2 * cfg_.m, cfg_.seq_len());
    int h = emit_conv("conv_in", in, w, 3, rng);

    std::vector<int> skips;
    for (int lev = 0; lev < cfg_.n_layer; ++lev) {
      for (int r = 0; r < cfg_.n_resnet; ++r)
        h = build_resblock("enc" + std::to_string(lev) + ".res" + std::to_string(r), h, rng);
      skips.push_back(h);
      if (lev + 1 < cfg_.n_layer)
        h = emit(detail::Op::pool, h, -1, -1, w, (val_len_[h] + 1) / 2);
    }

    h = build_resblock("mid.res0", h, rng);

    for (int lev = cfg_.n_layer - 1; lev >= 0; --lev) {
      int skip = skips[lev];
      h = emit(detail::Op::concat, h, skip, -1, val_ch_[h] + val_ch_[skip], val_len_[skip]);
      for (int r = 0; r < cfg_.n_resnet; ++r)
        h = build_resblock("dec" + std::to_string(lev) + ".res" + std::to_string(r), h, rng);
      if (lev > 0) {
        up_lens_.push_back(val_len_[skips[lev - 1]]);
        h = emit(detail::Op::upsample, h, -1, static_cast<int>(up_lens_.size()) - 1, w,
                 up_lens_.back());
      }
    }

    h = emit_gnorm("out.norm", h, rng);
    h = emit_silu(h);
    out_val_ = emit_conv("out.conv", h, cfg_.m, 3, rng, /*zero_init=*/true);
  }

  // ---- shared helpers ----------------------------------------------------

  void check_inputs(const Mat& x, const Mat* cond, double l) const {
    if (x.rows != rows() || x.cols != cols())
      throw std::invalid_argument("ScoreNet: target shape must be (omega+1) x m");
    if (cond != nullptr && (cond->rows != cfg_.omega || cond->cols != cfg_.m))
      throw std::invalid_argument("ScoreNet: condition shape must be omega x m");
    if (!(l > 0.0 && l <= 1.0 + 1e-9) || !std::isfinite(l))
      throw std::invalid_argument("ScoreNet: diffusion time must lie in (0, 1]");
  }

  // A workspace may be handed from one network to another (score() keeps a
  // thread-local one), and nets with equal depth share an instruction count,
  // so every buffer shape is checked, not just how many there are.
  bool shapes_match(const Workspace& ws) const {
    if (ws.vals.size() != val_ch_.size()) return false;
    for (std::size_t i = 0; i < val_ch_.size(); ++i)
      if (ws.vals[i].ch != val_ch_[i] || ws.vals[i].len != val_len_[i]) return false;
    return true;
  }

  void ensure(Workspace& ws) const {
    if (shapes_match(ws)) return;
    ws.vals.resize(val_ch_.size());
    for (std::size_t i = 0; i < val_ch_.size(); ++i) ws.vals[i].resize(val_ch_[i], val_len_[i]);
    ws.gvals.clear();
    ws.tvals.clear();
    ws.aux.assign(instrs_.size(), {});
    ws.primal_ready = false;
  }

  void compute_time_path(double l, Workspace& ws) const {
    const int e = cfg_.time_embed_dim;
    const int nf = e / 2;
    const double* freq = theta_.data();  // first registered parameter
    ws.fourier.assign(e, 0.0);
    for (int i = 0; i < nf; ++i) {
      double a = 2.0 * std::numbers::pi * freq[i] * l;
      ws.fourier[i] = std::sin(a);
      ws.fourier[nf + i] = std::cos(a);
    }
    dense_forward(time_d1_, ws.fourier, ws.t_pre);
    ws.t_act.resize(e);
    for (int i = 0; i < e; ++i) ws.t_act[i] = detail::silu(ws.t_pre[i]);
    dense_forward(time_d2_, ws.t_act, ws.temb);
  }

  void dense_forward(const detail::DenseSpec& d, const std::vector<double>& x,
                     std::vector<double>& y) const {
    y.assign(d.nout, 0.0);
    const double* w = theta_.data() + d.w;
    const double* b = theta_.data() + d.b;
    for (int i = 0; i < d.nout; ++i) {
      double acc = b[i];
      const double* wr = w + static_cast<std::size_t>(i) * d.nin;
      for (int j = 0; j < d.nin; ++j) acc += wr[j] * x[j];
      y[i] = acc;
    }
  }

  void backward_time_path(Workspace& ws, GradientSet& grad) const {
    const int e = cfg_.time_embed_dim;
    // through d2
    std::vector<double> g_act(e, 0.0);
    {
      const double* w = theta_.data() + time_d2_.w;
      double* gw = grad.data() + time_d2_.w;
      double* gb = grad.data() + time_d2_.b;
      for (int i = 0; i < e; ++i) {
        double g = ws.g_temb[i];
        gb[i] += g;
        const double* wr = w + static_cast<std::size_t>(i) * e;
        double* gwr = gw + static_cast<std::size_t>(i) * e;
        for (int j = 0; j < e; ++j) {
          gwr[j] += g * ws.t_act[j];
          g_act[j] += g * wr[j];
        }
      }
    }
    // through the activation and d1; fourier features carry no gradient
    {
      double* gw = grad.data() + time_d1_.w;
      double* gb = grad.data() + time_d1_.b;
      for (int i = 0; i < e; ++i) {
        double g = g_act[i] * detail::silu_deriv(ws.t_pre[i]);
        gb[i] += g;
        double* gwr = gw + static_cast<std::size_t>(i) * e;
        for (int j = 0; j < e; ++j) gwr[j] += g * ws.fourier[j];
      }
    }
  }

  // ---- per-op forward ----------------------------------------------------

  void run_forward(std::size_t idx, Workspace& ws) const {
    const detail::Instr& ins = instrs_[idx];
    const detail::FeatureMap& a = ws.vals[ins.in0];
    detail::FeatureMap& o = ws.vals[ins.out];
    switch (ins.op) {
      case detail::Op::conv: {
        const detail::ConvSpec& cs = conv_specs_[ins.spec];
        const double* w = theta_.data() + cs.w;
        const double* b = theta_.data() + cs.b;
        const int off = cs.k / 2, len = a.len;
        for (int co = 0; co < cs.cout; ++co) {
          double* orow = o.row(co);
          for (int t = 0; t < len; ++t) orow[t] = b[co];
          for (int ci = 0; ci < cs.cin; ++ci) {
            const double* arow = a.row(ci);
            const double* wr = w + (static_cast<std::size_t>(co) * cs.cin + ci) * cs.k;
            for (int dk = 0; dk < cs.k; ++dk) {
              double wv = wr[dk];
              int s0 = std::max(0, off - dk), s1 = std::min(len, len + off - dk);
              for (int t = s0; t < s1; ++t) orow[t] += wv * arow[t + dk - off];
            }
          }
        }
        break;
      }
      case detail::Op::gnorm: {
        const detail::NormSpec& nsp = norm_specs_[ins.spec];
        const double* g = theta_.data() + nsp.g;
        const double* b = theta_.data() + nsp.b;
        const int cpg = nsp.ch / nsp.groups, len = a.len;
        std::vector<double>& aux = ws.aux[idx];
        aux.assign(2 * nsp.groups, 0.0);
        for (int gr = 0; gr < nsp.groups; ++gr) {
          double sum = 0.0, sumsq = 0.0;
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            for (int t = 0; t < len; ++t) {
              sum += arow[t];
              sumsq += arow[t] * arow[t];
            }
          }
          double nelem = static_cast<double>(cpg) * len;
          double mean = sum / nelem;
          double var = std::max(0.0, sumsq / nelem - mean * mean);
          double invstd = 1.0 / std::sqrt(var + 1e-5);
          aux[2 * gr] = mean;
          aux[2 * gr + 1] = invstd;
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            double* orow = o.row(c);
            for (int t = 0; t < len; ++t) orow[t] = g[c] * (arow[t] - mean) * invstd + b[c];
          }
        }
        break;
      }
      case detail::Op::silu_act:
        for (std::size_t i = 0; i < a.v.size(); ++i) o.v[i] = detail::silu(a.v[i]);
        break;
      case detail::Op::add_time: {
        const detail::DenseSpec& d = dense_specs_[ins.spec];
        const double* w = theta_.data() + d.w;
        const double* b = theta_.data() + d.b;
        for (int c = 0; c < d.nout; ++c) {
          double bias = b[c];
          const double* wr = w + static_cast<std::size_t>(c) * d.nin;
          for (int j = 0; j < d.nin; ++j) bias += wr[j] * ws.temb[j];
          const double* arow = a.row(c);
          double* orow = o.row(c);
          for (int t = 0; t < a.len; ++t) orow[t] = arow[t] + bias;
        }
        break;
      }
      case detail::Op::pool:
        for (int c = 0; c < a.ch; ++c) {
          const double* arow = a.row(c);
          double* orow = o.row(c);
          for (int j = 0; j < o.len; ++j) {
            int t = 2 * j;
            orow[j] = (t + 1 < a.len) ? 0.5 * (arow[t] + arow[t + 1]) : arow[t];
          }
        }
        break;
      case detail::Op::upsample:
        for (int c = 0; c < a.ch; ++c) {
          const double* arow = a.row(c);
          double* orow = o.row(c);
          for (int t = 0; t < o.len; ++t) orow[t] = arow[std::min(t / 2, a.len - 1)];
        }
        break;
      case detail::Op::concat: {
        const detail::FeatureMap& b2 = ws.vals[ins.in1];
        for (int c = 0; c < a.ch; ++c)
          std::copy(a.row(c), a.row(c) + a.len, o.row(c));
        for (int c = 0; c < b2.ch; ++c)
          std::copy(b2.row(c), b2.row(c) + b2.len, o.row(a.ch + c));
        break;
      }
      case detail::Op::add: {
        const detail::FeatureMap& b2 = ws.vals[ins.in1];
        for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] = a.v[i] + b2.v[i];
        break;
      }
    }
  }

  // ---- per-op backward ---------------------------------------------------

  void run_backward(std::size_t idx, Workspace& ws, GradientSet& grad) const {
    const detail::Instr& ins = instrs_[idx];
    const detail::FeatureMap& a = ws.vals[ins.in0];
    const detail::FeatureMap& go = ws.gvals[ins.out];
    detail::FeatureMap& ga = ws.gvals[ins.in0];
    switch (ins.op) {
      case detail::Op::conv: {
        const detail::ConvSpec& cs = conv_specs_[ins.spec];
        const double* w = theta_.data() + cs.w;
        double* gw = grad.data() + cs.w;
        double* gb = grad.data() + cs.b;
        const int off = cs.k / 2, len = a.len;
        for (int co = 0; co < cs.cout; ++co) {
          const double* grow = go.row(co);
          double bsum = 0.0;
          for (int t = 0; t < len; ++t) bsum += grow[t];
          gb[co] += bsum;
          for (int ci = 0; ci < cs.cin; ++ci) {
            const double* arow = a.row(ci);
            double* garow = ga.row(ci);
            const std::size_t wbase = (static_cast<std::size_t>(co) * cs.cin + ci) * cs.k;
            for (int dk = 0; dk < cs.k; ++dk) {
              double wv = w[wbase + dk];
              double wacc = 0.0;
              int s0 = std::max(0, off - dk), s1 = std::min(len, len + off - dk);
              for (int t = s0; t < s1; ++t) {
                wacc += grow[t] * arow[t + dk - off];
                garow[t + dk - off] += wv * grow[t];
              }
              gw[wbase + dk] += wacc;
            }
          }
        }
        break;
      }
      case detail::Op::gnorm: {
        const detail::NormSpec& nsp = norm_specs_[ins.spec];
        const double* g = theta_.data() + nsp.g;
        double* gg = grad.data() + nsp.g;
        double* gbt = grad.data() + nsp.b;
        const std::vector<double>& aux = ws.aux[idx];
        const int cpg = nsp.ch / nsp.groups, len = a.len;
        for (int gr = 0; gr < nsp.groups; ++gr) {
          double mean = aux[2 * gr], invstd = aux[2 * gr + 1];
          double nelem = static_cast<double>(cpg) * len;
          double sum_gh = 0.0, sum_ghx = 0.0;
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            const double* grow = go.row(c);
            double gg_c = 0.0, gb_c = 0.0;
            for (int t = 0; t < len; ++t) {
              double xh = (arow[t] - mean) * invstd;
              gg_c += grow[t] * xh;
              gb_c += grow[t];
              double gh = grow[t] * g[c];
              sum_gh += gh;
              sum_ghx += gh * xh;
            }
            gg[c] += gg_c;
            gbt[c] += gb_c;
          }
          double mean_gh = sum_gh / nelem, mean_ghx = sum_ghx / nelem;
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            const double* grow = go.row(c);
            double* garow = ga.row(c);
            for (int t = 0; t < len; ++t) {
              double xh = (arow[t] - mean) * invstd;
              garow[t] += invstd * (grow[t] * g[c] - mean_gh - xh * mean_ghx);
            }
          }
        }
        break;
      }
      case detail::Op::silu_act:
        for (std::size_t i = 0; i < a.v.size(); ++i)
          ga.v[i] += go.v[i] * detail::silu_deriv(a.v[i]);
        break;
      case detail::Op::add_time: {
        const detail::DenseSpec& d = dense_specs_[ins.spec];
        const double* w = theta_.data() + d.w;
        double* gw = grad.data() + d.w;
        double* gb = grad.data() + d.b;
        for (int c = 0; c < d.nout; ++c) {
          const double* grow = go.row(c);
          double* garow = ga.row(c);
          double gsum = 0.0;
          for (int t = 0; t < a.len; ++t) {
            gsum += grow[t];
            garow[t] += grow[t];
          }
          gb[c] += gsum;
          const double* wr = w + static_cast<std::size_t>(c) * d.nin;
          double* gwr = gw + static_cast<std::size_t>(c) * d.nin;
          for (int j = 0; j < d.nin; ++j) {
            gwr[j] += gsum * ws.temb[j];
            ws.g_temb[j] += gsum * wr[j];
          }
        }
        break;
      }
      case detail::Op::pool:
        for (int c = 0; c < a.ch; ++c) {
          const double* grow = go.row(c);
          double* garow = ga.row(c);
          for (int j = 0; j < go.len; ++j) {
            int t = 2 * j;
            if (t + 1 < a.len) {
              garow[t] += 0.5 * grow[j];
              garow[t + 1] += 0.5 * grow[j];
            } else {
              garow[t] += grow[j];
            }
          }
        }
        break;
      case detail::Op::upsample:
        for (int c = 0; c < a.ch; ++c) {
          const double* grow = go.row(c);
          double* garow = ga.row(c);
          for (int t = 0; t < go.len; ++t) garow[std::min(t / 2, a.len - 1)] += grow[t];
        }
        break;
      case detail::Op::concat: {
        detail::FeatureMap& gb2 = ws.gvals[ins.in1];
        for (int c = 0; c < a.ch; ++c) {
          const double* grow = go.row(c);
          double* garow = ga.row(c);
          for (int t = 0; t < a.len; ++t) garow[t] += grow[t];
        }
        for (int c = 0; c < gb2.ch; ++c) {
          const double* grow = go.row(a.ch + c);
          double* gbrow = gb2.row(c);
          for (int t = 0; t < gb2.len; ++t) gbrow[t] += grow[t];
        }
        break;
      }
      case detail::Op::add: {
        detail::FeatureMap& gb2 = ws.gvals[ins.in1];
        for (std::size_t i = 0; i < go.v.size(); ++i) {
          ga.v[i] += go.v[i];
          gb2.v[i] += go.v[i];
        }
        break;
      }
    }
  }

  // ---- per-op forward-mode tangents --------------------------------------

  void run_jvp(std::size_t idx, Workspace& ws) const {
    const detail::Instr& ins = instrs_[idx];
    const detail::FeatureMap& a = ws.vals[ins.in0];
    const detail::TangentMap& ta = ws.tvals[ins.in0];
    detail::TangentMap& to = ws.tvals[ins.out];
    const int d = ta.dirs;
    switch (ins.op) {
      case detail::Op::conv: {
        const detail::ConvSpec& cs = conv_specs_[ins.spec];
        const double* w = theta_.data() + cs.w;
        const int off = cs.k / 2, len = a.len;
        to.zero();
        for (int co = 0; co < cs.cout; ++co) {
          for (int ci = 0; ci < cs.cin; ++ci) {
            const double* wr = w + (static_cast<std::size_t>(co) * cs.cin + ci) * cs.k;
            for (int dk = 0; dk < cs.k; ++dk) {
              double wv = wr[dk];
              if (wv == 0.0) continue;
              int s0 = std::max(0, off - dk), s1 = std::min(len, len + off - dk);
              for (int t = s0; t < s1; ++t) {
                const double* tp = ta.at(ci, t + dk - off);
                double* op = to.at(co, t);
                for (int q = 0; q < d; ++q) op[q] += wv * tp[q];
              }
            }
          }
        }
        break;
      }
      case detail::Op::gnorm: {
        const detail::NormSpec& nsp = norm_specs_[ins.spec];
        const double* g = theta_.data() + nsp.g;
        const std::vector<double>& aux = ws.aux[idx];
        const int cpg = nsp.ch / nsp.groups, len = a.len;
        std::vector<double> m1(d), m2(d);
        for (int gr = 0; gr < nsp.groups; ++gr) {
          double mean = aux[2 * gr], invstd = aux[2 * gr + 1];
          double nelem = static_cast<double>(cpg) * len;
          std::fill(m1.begin(), m1.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            for (int t = 0; t < len; ++t) {
              double xh = (arow[t] - mean) * invstd;
              const double* tp = ta.at(c, t);
              for (int q = 0; q < d; ++q) {
                m1[q] += tp[q];
                m2[q] += xh * tp[q];
              }
            }
          }
          for (int q = 0; q < d; ++q) {
            m1[q] /= nelem;
            m2[q] /= nelem;
          }
          for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
            const double* arow = a.row(c);
            for (int t = 0; t < len; ++t) {
              double xh = (arow[t] - mean) * invstd;
              const double* tp = ta.at(c, t);
              double* op = to.at(c, t);
              double gc = g[c] * invstd;
              for (int q = 0; q < d; ++q) op[q] = gc * (tp[q] - m1[q] - xh * m2[q]);
            }
          }
        }
        break;
      }
      case detail::Op::silu_act:
        for (int c = 0; c < a.ch; ++c) {
          const double* arow = a.row(c);
          for (int t = 0; t < a.len; ++t) {
            double dv = detail::silu_deriv(arow[t]);
            const double* tp = ta.at(c, t);
            double* op = to.at(c, t);
            for (int q = 0; q < d; ++q) op[q] = dv * tp[q];
          }
        }
        break;
      case detail::Op::add_time:  // temb is held fixed: identity on tangents
        std::copy(ta.v.begin(), ta.v.end(), to.v.begin());
        break;
      case detail::Op::pool:
        for (int c = 0; c < a.ch; ++c)
          for (int j = 0; j < to.len; ++j) {
            int t = 2 * j;
            const double* t0 = ta.at(c, t);
            double* op = to.at(c, j);
            if (t + 1 < a.len) {
              const double* t1 = ta.at(c, t + 1);
              for (int q = 0; q < d; ++q) op[q] = 0.5 * (t0[q] + t1[q]);
            } else {
              for (int q = 0; q < d; ++q) op[q] = t0[q];
            }
          }
        break;
      case detail::Op::upsample:
        for (int c = 0; c < a.ch; ++c)
          for (int t = 0; t < to.len; ++t) {
            const double* tp = ta.at(c, std::min(t / 2, a.len - 1));
            double* op = to.at(c, t);
            for (int q = 0; q < d; ++q) op[q] = tp[q];
          }
        break;
      case detail::Op::concat: {
        const detail::TangentMap& tb = ws.tvals[ins.in1];
        for (int c = 0; c < a.ch; ++c)
          for (int t = 0; t < a.len; ++t)
            std::copy(ta.at(c, t), ta.at(c, t) + d, to.at(c, t));
        for (int c = 0; c < tb.ch; ++c)
          for (int t = 0; t < tb.len; ++t)
            std::copy(tb.at(c, t), tb.at(c, t) + d, to.at(a.ch + c, t));
        break;
      }
      case detail::Op::add: {
        const detail::TangentMap& tb = ws.tvals[ins.in1];
        for (std::size_t i = 0; i < to.v.size(); ++i) to.v[i] = ta.v[i] + tb.v[i];
        break;
      }
    }
  }

  // ---- binary io helpers -------------------------------------------------

  static void write_u32(std::ofstream& o, std::uint32_t v) {
    o.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_i32(std::ofstream& o, std::int32_t v) {
    o.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& o, std::uint64_t v) {
    o.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("ScoreNet::load: truncated file " + path);
    return v;
  }
  static std::int32_t read_i32(std::ifstream& in, const std::string& path) {
    std::int32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("ScoreNet::load: truncated file " + path);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    std::uint64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw std::runtime_error("ScoreNet::load: truncated file " + path);
    return v;
  }

  ScoreNetConfig cfg_;
  std::vector<double> theta_;
  std::vector<ParamInfo> infos_;
  std::vector<detail::Instr> instrs_;
  std::vector<detail::ConvSpec> conv_specs_;
  std::vector<detail::NormSpec> norm_specs_;
  std::vector<detail::DenseSpec> dense_specs_;
  std::vector<int> up_lens_;
  std::vector<int> val_ch_, val_len_;
  detail::DenseSpec time_d1_{}, time_d2_{};
  int out_val_ = -1;
};

}  // namespace diffad

#endif
