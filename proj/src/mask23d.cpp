#include "s3d/mask23d.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "s3d/error.hpp"
#include "s3d/optim.hpp"
#include "s3d/rng.hpp"

namespace s3d {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// Fixed-order row sums; Eigen's vectorized reductions depend on alignment.
void add_row_sums(const Eigen::MatrixXd& m, double* out) {
  for (long i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (long j = 0; j < m.cols(); ++j) acc += m(i, j);
    out[i] += acc;
  }
}

Vec3 sub(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 add_scaled(const Vec3& a, const Vec3& b, double s) {
  return {a.x + s * b.x, a.y + s * b.y, a.z + s * b.z};
}
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(const Vec3& a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
Vec3 scaled(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }

struct Layers {
  std::vector<Conv2d> encoder;
  Linear fc;
  std::size_t base = 0;
  std::size_t scale_w = 0, scale_b = 0, shift_w = 0, shift_b = 0;
  std::size_t fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;
  Conv2d up;
};

Layers bind(const Mask23DConfig& cfg, const ParamSet& p) {
  Layers l;
  int cin = cfg.num_classes;
  for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
    Conv2d c;
    c.in_channels = cin;
    c.out_channels = cfg.encoder_channels[i];
    c.kernel = 3;
    c.stride = 2;
    c.pad = 1;
    c.weight = p.index_of("enc.conv" + std::to_string(i) + ".w");
    c.bias = p.index_of("enc.conv" + std::to_string(i) + ".b");
    l.encoder.push_back(c);
    cin = c.out_channels;
  }
  const int s = cfg.encoder_output_size();
  l.fc.in_features = cin * s * s + cfg.latent_dim;
  l.fc.out_features = cfg.style_rows * cfg.style_dim;
  l.fc.weight = p.index_of("enc.fc.w");
  l.fc.bias = p.index_of("enc.fc.b");
  l.base = p.index_of("tri.base");
  l.scale_w = p.index_of("tri.scale.w");
  l.scale_b = p.index_of("tri.scale.b");
  l.shift_w = p.index_of("tri.shift.w");
  l.shift_b = p.index_of("tri.shift.b");
  l.fc1_w = p.index_of("mlp.fc1.w");
  l.fc1_b = p.index_of("mlp.fc1.b");
  l.fc2_w = p.index_of("mlp.fc2.w");
  l.fc2_b = p.index_of("mlp.fc2.b");
  l.up.in_channels = 3 + cfg.feature_dim;
  l.up.out_channels = 3;
  l.up.kernel = 3;
  l.up.stride = 1;
  l.up.pad = 1;
  l.up.weight = p.index_of("up.conv.w");
  l.up.bias = p.index_of("up.conv.b");
  return l;
}

// ---- encoder ---------------------------------------------------------------

struct EncoderTape {
  std::vector<FeatureMap> inputs;
  std::vector<FeatureMap> pre;
  std::vector<double> fc_in;
};

StyleVector encode_impl(const Mask23DParams& params, const Layers& l,
                        const SegMask& mask, const LatentCode& z, EncoderTape* tape) {
  const Mask23DConfig& cfg = params.config;
  if (mask.width() != cfg.mask_size || mask.height() != cfg.mask_size) {
    throw ConfigError("teacher expects " + std::to_string(cfg.mask_size) + "x" +
                      std::to_string(cfg.mask_size) + " masks");
  }
  if (mask.num_classes() != cfg.num_classes) {
    throw ConfigError("teacher expects masks with " + std::to_string(cfg.num_classes) +
                      " classes");
  }
  if (static_cast<int>(z.data.size()) != cfg.latent_dim) {
    throw ConfigError("latent code has dim " + std::to_string(z.data.size()) +
                      ", expected " + std::to_string(cfg.latent_dim));
  }
  FeatureMap x(cfg.num_classes, cfg.mask_size, cfg.mask_size);
  const auto labels = mask.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) x.data[labels[i] * x.plane() + i] = 1.0;
  for (const Conv2d& conv : l.encoder) {
    FeatureMap pre = conv.forward(params.tensors, x);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre.push_back(pre);
    }
    x = std::move(pre);
    leaky_relu_inplace(x.data);
  }
  std::vector<double> fc_in = std::move(x.data);
  fc_in.insert(fc_in.end(), z.data.begin(), z.data.end());
  std::vector<double> w = l.fc.forward(params.tensors, fc_in);
  if (tape) tape->fc_in = std::move(fc_in);
  return StyleVector(cfg.style_rows, cfg.style_dim, std::move(w));
}

void encode_backward(const Mask23DParams& params, const Layers& l,
                     const EncoderTape& tape, const std::vector<double>& dw,
                     ParamSet& grads) {
  std::vector<double> dfc = l.fc.backward(params.tensors, tape.fc_in, dw, grads);
  const FeatureMap& last_pre = tape.pre.back();
  FeatureMap dx(last_pre.channels, last_pre.height, last_pre.width);
  std::copy(dfc.begin(), dfc.begin() + dx.data.size(), dx.data.begin());
  for (std::size_t k = l.encoder.size(); k-- > 0;) {
    leaky_relu_backward_inplace(tape.pre[k].data, dx.data);
    dx = l.encoder[k].backward(params.tensors, tape.inputs[k], dx, grads);
  }
}

// ---- tri-plane -------------------------------------------------------------

struct Modulation {
  // Per plane, per channel: S_p (sum of scales) and T_p (sum of shifts).
  std::array<std::vector<double>, 3> scale;
  std::array<std::vector<double>, 3> shift;
};

Modulation modulation(const Mask23DParams& params, const Layers& l, const StyleVector& w) {
  const Mask23DConfig& cfg = params.config;
  if (w.rows != cfg.style_rows || w.dim != cfg.style_dim ||
      w.data.size() != static_cast<std::size_t>(w.rows) * w.dim) {
    throw ConfigError("style vector shape does not match the teacher");
  }
  const int f_count = cfg.plane_channels;
  const int d = cfg.style_dim;
  const auto sw = params.tensors[l.scale_w].data();
  const auto sb = params.tensors[l.scale_b].data();
  const auto tw = params.tensors[l.shift_w].data();
  const auto tb = params.tensors[l.shift_b].data();
  Modulation m;
  for (int p = 0; p < 3; ++p) {
    m.scale[p].assign(f_count, 0.0);
    m.shift[p].assign(f_count, 0.0);
  }
  for (int r = 0; r < cfg.style_rows; ++r) {
    const int p = r % 3;
    const double* wr = w.data.data() + static_cast<std::size_t>(r) * d;
    for (int f = 0; f < f_count; ++f) {
      const std::size_t row = static_cast<std::size_t>(r) * f_count + f;
      double s = sb[row];
      double t = tb[row];
      for (int k = 0; k < d; ++k) {
        s += sw[row * d + k] * wr[k];
        t += tw[row * d + k] * wr[k];
      }
      m.scale[p][f] += s;
      m.shift[p][f] += t;
    }
  }
  return m;
}

TriPlane synth_impl(const Mask23DParams& params, const Layers& l, const Modulation& m) {
  const Mask23DConfig& cfg = params.config;
  TriPlane tp;
  tp.res = cfg.plane_res;
  tp.channels = cfg.plane_channels;
  const auto base = params.tensors[l.base].data();
  const std::size_t plane_size = static_cast<std::size_t>(tp.res) * tp.res * tp.channels;
  for (int p = 0; p < 3; ++p) {
    tp.planes[p].resize(plane_size);
    for (std::size_t i = 0; i < plane_size; ++i) {
      const int f = static_cast<int>(i % tp.channels);
      tp.planes[p][i] = base[p * plane_size + i] * (1.0 + m.scale[p][f]) + m.shift[p][f];
    }
  }
  return tp;
}

// Returns dL/dw.
std::vector<double> synth_backward(const Mask23DParams& params, const Layers& l,
                                   const StyleVector& w, const Modulation& m,
                                   const std::array<std::vector<double>, 3>& dplanes,
                                   ParamSet& grads) {
  const Mask23DConfig& cfg = params.config;
  const int f_count = cfg.plane_channels;
  const int d = cfg.style_dim;
  const std::size_t plane_size = dplanes[0].size();
  const auto base = params.tensors[l.base].data();
  auto dbase = grads.mutable_at(l.base).data();
  std::array<std::vector<double>, 3> ds, dt;
  for (int p = 0; p < 3; ++p) {
    ds[p].assign(f_count, 0.0);
    dt[p].assign(f_count, 0.0);
    for (std::size_t i = 0; i < plane_size; ++i) {
      const int f = static_cast<int>(i % f_count);
      const double g = dplanes[p][i];
      dbase[p * plane_size + i] += g * (1.0 + m.scale[p][f]);
      ds[p][f] += g * base[p * plane_size + i];
      dt[p][f] += g;
    }
  }
  const auto sw = params.tensors[l.scale_w].data();
  const auto tw = params.tensors[l.shift_w].data();
  auto dsw = grads.mutable_at(l.scale_w).data();
  auto dsb = grads.mutable_at(l.scale_b).data();
  auto dtw = grads.mutable_at(l.shift_w).data();
  auto dtb = grads.mutable_at(l.shift_b).data();
  std::vector<double> dw(w.data.size(), 0.0);
  for (int r = 0; r < cfg.style_rows; ++r) {
    const int p = r % 3;
    const double* wr = w.data.data() + static_cast<std::size_t>(r) * d;
    double* dwr = dw.data() + static_cast<std::size_t>(r) * d;
    for (int f = 0; f < f_count; ++f) {
      const std::size_t row = static_cast<std::size_t>(r) * f_count + f;
      dsb[row] += ds[p][f];
      dtb[row] += dt[p][f];
      for (int k = 0; k < d; ++k) {
        dsw[row * d + k] += ds[p][f] * wr[k];
        dtw[row * d + k] += dt[p][f] * wr[k];
        dwr[k] += sw[row * d + k] * ds[p][f] + tw[row * d + k] * dt[p][f];
      }
    }
  }
  return dw;
}

struct Tap {
  std::array<std::uint32_t, 4> texel{};  // i * R + j
  std::array<double, 4> weight{};
};

double to_texel(double u, int res) {
  const double t = (std::clamp(u, -1.0, 1.0) + 1.0) * 0.5 * res - 0.5;
  return std::clamp(t, 0.0, static_cast<double>(res - 1));
}

Tap make_tap(double a, double b, int res) {
  const double ta = to_texel(a, res);
  const double tb = to_texel(b, res);
  const int ia = std::min(static_cast<int>(std::floor(ta)), std::max(res - 2, 0));
  const int ib = std::min(static_cast<int>(std::floor(tb)), std::max(res - 2, 0));
  const int ia1 = std::min(ia + 1, res - 1);
  const int ib1 = std::min(ib + 1, res - 1);
  const double fa = ta - ia;
  const double fb = tb - ib;
  Tap t;
  t.texel = {static_cast<std::uint32_t>(ia * res + ib), static_cast<std::uint32_t>(ia1 * res + ib),
             static_cast<std::uint32_t>(ia * res + ib1), static_cast<std::uint32_t>(ia1 * res + ib1)};
  t.weight = {(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb};
  return t;
}

std::array<Tap, 3> taps_for(const Vec3& p, int res) {
  return {make_tap(p.x, p.y, res), make_tap(p.x, p.z, res), make_tap(p.y, p.z, res)};
}

void gather(const TriPlane& tp, const std::array<Tap, 3>& taps, double* out) {
  std::fill(out, out + tp.channels, 0.0);
  for (int p = 0; p < 3; ++p) {
    for (int k = 0; k < 4; ++k) {
      const double w = taps[p].weight[k];
      if (w == 0.0) continue;
      const double* src = tp.planes[p].data() + static_cast<std::size_t>(taps[p].texel[k]) * tp.channels;
      for (int f = 0; f < tp.channels; ++f) out[f] += w * src[f];
    }
  }
}

bool inside_box(const Vec3& p) {
  return std::abs(p.x) <= 1.0 && std::abs(p.y) <= 1.0 && std::abs(p.z) <= 1.0;
}

// ---- field over a batch of points -----------------------------------------

struct FieldBatch {
  std::vector<std::array<Tap, 3>> taps;
  std::vector<char> inside;
  Eigen::MatrixXd feats;  // F x M
  Eigen::MatrixXd hpre;   // H x M
  Eigen::MatrixXd out;    // O x M, raw head outputs
};

FieldBatch eval_field(const Mask23DParams& params, const Layers& l, const TriPlane& tp,
                      const std::vector<Vec3>& points) {
  const Mask23DConfig& cfg = params.config;
  const long m = static_cast<long>(points.size());
  FieldBatch b;
  b.taps.resize(m);
  b.inside.resize(m);
  b.feats.resize(cfg.plane_channels, m);
  for (long i = 0; i < m; ++i) {
    b.taps[i] = taps_for(points[i], tp.res);
    b.inside[i] = inside_box(points[i]);
    gather(tp, b.taps[i], b.feats.col(i).data());
  }
  const ParamSet& p = params.tensors;
  ConstRowMap w1(p[l.fc1_w].data().data(), cfg.hidden, cfg.plane_channels);
  ConstVecMap b1(p[l.fc1_b].data().data(), cfg.hidden);
  ConstRowMap w2(p[l.fc2_w].data().data(), cfg.field_outputs(), cfg.hidden);
  ConstVecMap b2(p[l.fc2_b].data().data(), cfg.field_outputs());
  b.hpre.noalias() = w1 * b.feats;
  b.hpre.colwise() += b1;
  Eigen::MatrixXd h = b.hpre.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
  b.out.noalias() = w2 * h;
  b.out.colwise() += b2;
  return b;
}

FieldSample decode(const Mask23DConfig& cfg, const double* o, bool inside) {
  FieldSample s;
  for (int k = 0; k < 3; ++k) s.color[k] = sigmoid(o[k]);
  s.density = inside ? softplus(o[3]) : 0.0;
  s.feature.assign(o + 4, o + 4 + cfg.feature_dim);
  const double* z = o + 4 + cfg.feature_dim;
  const double zmax = *std::max_element(z, z + cfg.num_classes);
  s.semantic.resize(cfg.num_classes);
  double sum = 0.0;
  for (int k = 0; k < cfg.num_classes; ++k) {
    s.semantic[k] = std::exp(z[k] - zmax);
    sum += s.semantic[k];
  }
  for (double& v : s.semantic) v /= sum;
  return s;
}

std::vector<double> sample_depths(const RenderConfig& rcfg) {
  const int n = rcfg.samples_per_ray;
  const double step = (rcfg.far - rcfg.near) / n;
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) t[i] = rcfg.near + (i + 0.5) * step;
  return t;
}

std::vector<double> sample_deltas(const std::vector<double>& t, const RenderConfig& rcfg) {
  const int n = static_cast<int>(t.size());
  std::vector<double> d(n);
  for (int i = 0; i + 1 < n; ++i) d[i] = t[i + 1] - t[i];
  d[n - 1] = (rcfg.far - rcfg.near) / n;
  return d;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void Mask23DConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("teacher: " + m); };
  if (mask_size < 2) fail("mask_size must be >= 2");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (latent_dim < 1 || style_rows < 1 || style_dim < 1) fail("latent/style sizes must be >= 1");
  if (plane_res < 1 || plane_channels < 1 || hidden < 1 || feature_dim < 0) {
    fail("plane/MLP sizes must be positive");
  }
  if (encoder_channels.empty()) fail("encoder needs at least one conv");
  for (int c : encoder_channels) {
    if (c < 1) fail("encoder channels must be >= 1");
  }
}

int Mask23DConfig::encoder_output_size() const {
  int s = mask_size;
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) s = (s - 1) / 2 + 1;
  return s;
}

void RenderConfig::validate() const {
  if (samples_per_ray < 2) throw ConfigError("samples_per_ray must be >= 2");
  if (!(near > 0.0 && near < far)) throw ConfigError("render needs 0 < near < far");
}

// ---- construction ----------------------------------------------------------

Mask23DParams init_teacher(const Mask23DConfig& config, std::uint64_t seed) {
  config.validate();
  Mask23DParams out{config, {}};
  ParamSet& p = out.tensors;
  std::uint64_t ordinal = 0;
  auto next = [&] { return rng::derive(seed, {ordinal++}); };
  int cin = config.num_classes;
  for (std::size_t i = 0; i < config.encoder_channels.size(); ++i) {
    Conv2d::create(p, "enc.conv" + std::to_string(i), cin, config.encoder_channels[i], 3, 2, 1,
                   next());
    cin = config.encoder_channels[i];
  }
  const int s = config.encoder_output_size();
  Linear::create(p, "enc.fc", cin * s * s + config.latent_dim,
                 config.style_rows * config.style_dim, next());

  const auto r = static_cast<std::size_t>(config.plane_res);
  const auto f = static_cast<std::size_t>(config.plane_channels);
  const auto rows = static_cast<std::size_t>(config.style_rows);
  const auto d = static_cast<std::size_t>(config.style_dim);
  p.add("tri.base", uniform_tensor({3, r, r, f}, 1.0, next()));
  const double mod_bound = xavier_bound(d, f);
  p.add("tri.scale.w", uniform_tensor({rows, f, d}, mod_bound, next()));
  p.add("tri.scale.b", Tensor({rows, f}));
  p.add("tri.shift.w", uniform_tensor({rows, f, d}, mod_bound, next()));
  p.add("tri.shift.b", Tensor({rows, f}));

  Linear::create(p, "mlp.fc1", config.plane_channels, config.hidden, next());
  Linear::create(p, "mlp.fc2", config.hidden, config.field_outputs(), next());

  const Conv2d up = Conv2d::create(p, "up.conv", 3 + config.feature_dim, 3, 3, 1, 1, next());
  Tensor& w = p.mutable_at(up.weight);
  w.fill(0.0);
  const std::size_t cin_up = 3 + config.feature_dim;
  for (std::size_t c = 0; c < 3; ++c) w[((c * cin_up + c) * 3 + 1) * 3 + 1] = 1.0;
  return out;
}

Mask23DParams init_frozen(const Mask23DConfig& config, std::uint64_t seed) {
  Mask23DParams p = init_teacher(config, seed);
  p.tensors.freeze();
  return p;
}

// ---- encoder ---------------------------------------------------------------

StyleVector encode(const Mask23DParams& params, const SegMask& mask, const LatentCode& z) {
  return encode_impl(params, bind(params.config, params.tensors), mask, z, nullptr);
}

StyleVector style_target(const Mask23DParams& params, const SegMask& mask) {
  return encode(params, mask, LatentCode{std::vector<double>(params.config.latent_dim, 0.0)});
}

LatentCode sample_latent(const Mask23DConfig& config, std::uint64_t seed) {
  SplitMix64 g(seed);
  LatentCode z;
  z.data.resize(config.latent_dim);
  for (double& v : z.data) v = g.normal();
  return z;
}

TriPlane synth_triplane(const Mask23DParams& params, const StyleVector& w) {
  const Layers l = bind(params.config, params.tensors);
  return synth_impl(params, l, modulation(params, l, w));
}

std::vector<double> sample_triplane(const TriPlane& planes, const Vec3& p) {
  std::vector<double> out(planes.channels);
  gather(planes, taps_for(p, planes.res), out.data());
  return out;
}

FieldSample field_eval(const Mask23DParams& params, const TriPlane& planes, const Vec3& p) {
  const Layers l = bind(params.config, params.tensors);
  const FieldBatch b = eval_field(params, l, planes, {p});
  return decode(params.config, b.out.col(0).data(), b.inside[0] != 0);
}

// ---- cameras ---------------------------------------------------------------

std::vector<Ray> make_rays(const Camera& camera) {
  if (camera.width < 1 || camera.height < 1) throw ConfigError("camera image size must be positive");
  if (!(camera.fov_deg > 0.0 && camera.fov_deg < 180.0)) {
    throw ConfigError("camera field of view must lie in (0, 180) degrees");
  }
  const Vec3 view = sub(camera.look_at, camera.position);
  const double vlen = norm(view);
  if (vlen == 0.0) throw ConfigError("camera position equals look_at");
  const Vec3 f = scaled(view, 1.0 / vlen);
  const double ulen = norm(camera.up);
  Vec3 r = cross(f, camera.up);
  const double rlen = norm(r);
  if (ulen == 0.0 || rlen < 1e-9 * ulen) {
    throw ConfigError("camera up vector is parallel to the view direction");
  }
  r = scaled(r, 1.0 / rlen);
  const Vec3 u = cross(r, f);
  const double half = std::tan(0.5 * camera.fov_deg * std::numbers::pi / 180.0);
  const double aspect = static_cast<double>(camera.width) / camera.height;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int j = 0; j < camera.height; ++j) {
    const double py = (1.0 - 2.0 * (j + 0.5) / camera.height) * half;
    for (int i = 0; i < camera.width; ++i) {
      const double px = (2.0 * (i + 0.5) / camera.width - 1.0) * half * aspect;
      Vec3 d = add_scaled(add_scaled(f, r, px), u, py);
      d = scaled(d, 1.0 / norm(d));
      rays.push_back({camera.position, d});
    }
  }
  return rays;
}

Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius,
                    double fov_deg, int size) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  Camera c;
  c.position = {radius * std::sin(az) * std::cos(el), radius * std::sin(el),
                radius * std::cos(az) * std::cos(el)};
  c.look_at = {0.0, 0.0, 0.0};
  c.up = {0.0, 1.0, 0.0};
  c.fov_deg = fov_deg;
  c.width = size;
  c.height = size;
  return c;
}

Camera frontal_camera(int size) { return orbit_camera(0.0, 0.0, 3.0, 40.0, size); }

// ---- compositing -----------------------------------------------------------

RayResult composite(std::span<const FieldSample> samples, std::span<const double> deltas,
                    const std::array<double, 3>& background, std::vector<double>* weights) {
  if (samples.size() != deltas.size()) throw ConfigError("one delta per sample required");
  RayResult out;
  if (!samples.empty()) {
    out.semantic.assign(samples[0].semantic.size(), 0.0);
    out.feature.assign(samples[0].feature.size(), 0.0);
  }
  if (weights) weights->assign(samples.size(), 0.0);
  double depth = 0.0;  // optical depth before sample i
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FieldSample& s = samples[i];
    const double tau_step = s.density * deltas[i];
    const double transmittance = std::exp(-depth);
    const double w = transmittance * -std::expm1(-tau_step);
    depth += tau_step;
    if (weights) (*weights)[i] = w;
    if (w == 0.0) continue;
    for (int k = 0; k < 3; ++k) out.color[k] += w * s.color[k];
    for (std::size_t k = 0; k < out.semantic.size(); ++k) out.semantic[k] += w * s.semantic[k];
    for (std::size_t k = 0; k < out.feature.size(); ++k) out.feature[k] += w * s.feature[k];
    out.weight_sum += w;
  }
  const double residual = 1.0 - out.weight_sum;
  for (int k = 0; k < 3; ++k) out.color[k] += residual * background[k];
  return out;
}

RayTrace trace_ray(const Mask23DParams& params, const TriPlane& planes, const Ray& ray,
                   const RenderConfig& rcfg) {
  rcfg.validate();
  const Layers l = bind(params.config, params.tensors);
  RayTrace tr;
  tr.t = sample_depths(rcfg);
  tr.delta = sample_deltas(tr.t, rcfg);
  std::vector<Vec3> pts;
  for (double t : tr.t) pts.push_back(add_scaled(ray.origin, ray.direction, t));
  const FieldBatch b = eval_field(params, l, planes, pts);
  std::vector<FieldSample> samples;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    samples.push_back(decode(params.config, b.out.col(i).data(), b.inside[i] != 0));
    tr.density.push_back(samples.back().density);
  }
  tr.result = composite(samples, tr.delta, rcfg.background, &tr.weights);
  return tr;
}

RayResult render_ray(const Mask23DParams& params, const TriPlane& planes, const Ray& ray,
                     const RenderConfig& rcfg) {
  return trace_ray(params, planes, ray, rcfg).result;
}

namespace {

// Renders `rays` and, when requested, keeps what the semantic backward pass needs.
struct RenderCache {
  std::vector<double> t, delta;
  FieldBatch field;
  std::vector<FieldSample> samples;  // ray-major, N per ray
  std::vector<std::vector<double>> weights;
};

std::vector<RayResult> render_rays(const Mask23DParams& params, const Layers& l,
                                   const TriPlane& tp, std::span<const Ray> rays,
                                   const RenderConfig& rcfg, RenderCache* cache) {
  const auto t = sample_depths(rcfg);
  const auto delta = sample_deltas(t, rcfg);
  const int n = rcfg.samples_per_ray;
  std::vector<Vec3> pts;
  pts.reserve(rays.size() * n);
  for (const Ray& r : rays) {
    for (double ti : t) pts.push_back(add_scaled(r.origin, r.direction, ti));
  }
  FieldBatch b = eval_field(params, l, tp, pts);
  std::vector<RayResult> out(rays.size());
  std::vector<FieldSample> samples(n);
  if (cache) {
    cache->samples.clear();
    cache->weights.assign(rays.size(), {});
  }
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (int i = 0; i < n; ++i) {
      const std::size_t m = r * n + i;
      samples[i] = decode(params.config, b.out.col(static_cast<long>(m)).data(), b.inside[m] != 0);
    }
    out[r] = composite(samples, delta, rcfg.background, cache ? &cache->weights[r] : nullptr);
    if (cache) cache->samples.insert(cache->samples.end(), samples.begin(), samples.end());
  }
  if (cache) {
    cache->t = t;
    cache->delta = delta;
    cache->field = std::move(b);
  }
  return out;
}

}  // namespace

RenderOutput render_image(const Mask23DParams& params, const StyleVector& w, const Camera& camera,
                          const RenderConfig& rcfg) {
  rcfg.validate();
  const Mask23DConfig& cfg = params.config;
  const Layers l = bind(cfg, params.tensors);
  const TriPlane tp = synth_impl(params, l, modulation(params, l, w));
  const auto rays = make_rays(camera);
  const auto h = static_cast<std::size_t>(camera.height);
  const auto wd = static_cast<std::size_t>(camera.width);
  RenderOutput out{Tensor({h, wd, 3}), Tensor({h, wd, std::size_t(cfg.num_classes)}),
                   Tensor({h, wd, std::size_t(std::max(cfg.feature_dim, 1))}), Tensor({h, wd})};
  constexpr std::size_t kChunk = 1024;
  for (std::size_t start = 0; start < rays.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, rays.size() - start);
    const auto results =
        render_rays(params, l, tp, std::span(rays).subspan(start, count), rcfg, nullptr);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t px = start + k;
      const RayResult& r = results[k];
      for (int c = 0; c < 3; ++c) out.color[px * 3 + c] = r.color[c];
      for (int c = 0; c < cfg.num_classes; ++c) out.semantic[px * cfg.num_classes + c] = r.semantic[c];
      for (int c = 0; c < cfg.feature_dim; ++c) out.feature[px * cfg.feature_dim + c] = r.feature[c];
      out.weight_sum[px] = r.weight_sum;
    }
  }
  return out;
}

UpsampledOutput upsample(const Mask23DParams& params, const RenderOutput& render) {
  const Mask23DConfig& cfg = params.config;
  const Layers l = bind(cfg, params.tensors);
  const int h = static_cast<int>(render.color.dim(0));
  const int w = static_cast<int>(render.color.dim(1));
  const int l_dim = cfg.feature_dim;
  FeatureMap in(3 + l_dim, h, w);
  const std::size_t plane = in.plane();
  for (std::size_t px = 0; px < plane; ++px) {
    for (int c = 0; c < 3; ++c) in.data[c * plane + px] = render.color[px * 3 + c];
    for (int c = 0; c < l_dim; ++c) in.data[(3 + c) * plane + px] = render.feature[px * l_dim + c];
  }
  const FeatureMap y = l.up.forward(params.tensors, upsample2(in));
  const auto h2 = static_cast<std::size_t>(2 * h);
  const auto w2 = static_cast<std::size_t>(2 * w);
  UpsampledOutput out{Tensor({h2, w2, 3}), Tensor({h2, w2, std::size_t(cfg.num_classes)})};
  const std::size_t plane2 = y.plane();
  for (std::size_t px = 0; px < plane2; ++px) {
    for (int c = 0; c < 3; ++c) out.color[px * 3 + c] = y.data[c * plane2 + px];
  }
  for (std::size_t yy = 0; yy < h2; ++yy) {
    for (std::size_t xx = 0; xx < w2; ++xx) {
      const std::size_t src = (yy / 2) * w + xx / 2;
      for (int c = 0; c < cfg.num_classes; ++c) {
        out.semantic[(yy * w2 + xx) * cfg.num_classes + c] = render.semantic[src * cfg.num_classes + c];
      }
    }
  }
  return out;
}

// ---- semantic pretraining --------------------------------------------------

SegMask resample_mask(const SegMask& mask, int size) {
  std::vector<int> labels(static_cast<std::size_t>(size) * size);
  for (int j = 0; j < size; ++j) {
    const int sy = std::min(static_cast<int>((j + 0.5) * mask.height() / size), mask.height() - 1);
    for (int i = 0; i < size; ++i) {
      const int sx = std::min(static_cast<int>((i + 0.5) * mask.width() / size), mask.width() - 1);
      labels[static_cast<std::size_t>(j) * size + i] = mask.at(sx, sy);
    }
  }
  return SegMask(size, size, mask.num_classes(), std::move(labels));
}

double semantic_render_loss(const Mask23DParams& params, const SegMask& mask,
                            const PretrainOptions& options, ParamSet* grads) {
  options.render.validate();
  const Mask23DConfig& cfg = params.config;
  const Layers l = bind(cfg, params.tensors);
  EncoderTape etape;
  const StyleVector w = encode_impl(params, l, mask,
                                    LatentCode{std::vector<double>(cfg.latent_dim, 0.0)},
                                    grads ? &etape : nullptr);
  const Modulation mod = modulation(params, l, w);
  const TriPlane tp = synth_impl(params, l, mod);
  const auto rays = make_rays(frontal_camera(options.render_size));
  const SegMask target = resample_mask(mask, options.render_size);
  RenderCache cache;
  const auto results = render_rays(params, l, tp, rays, options.render, grads ? &cache : nullptr);

  const double inv_n = 1.0 / static_cast<double>(rays.size());
  const auto labels = target.labels();
  double loss = 0.0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    loss -= std::log(std::max(results[r].semantic[labels[r]], 1e-12));
  }
  loss *= inv_n;
  if (!grads) return loss;

  const int n = options.render.samples_per_ray;
  const int c_count = cfg.num_classes;
  const int outputs = cfg.field_outputs();
  const long m = static_cast<long>(rays.size()) * n;
  Eigen::MatrixXd dout = Eigen::MatrixXd::Zero(outputs, m);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const int y = labels[r];
    const double isem = results[r].semantic[y];
    if (!(isem > 1e-12)) continue;
    const double g_sem = -inv_n / isem;  // dL/dI_s[y]
    const auto& wts = cache.weights[r];
    // g_i = dL/dtau_i
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = g_sem * cache.samples[r * n + i].semantic[y];
    double tail = 0.0;  // sum_{i>k} g_i tau_i
    double depth_before = 0.0;
    std::vector<double> depth(n);
    for (int i = 0; i < n; ++i) {
      depth[i] = depth_before;
      depth_before += cache.samples[r * n + i].density * cache.delta[i];
    }
    for (int k = n - 1; k >= 0; --k) {
      const FieldSample& s = cache.samples[r * n + k];
      const std::size_t col = r * n + k;
      const double dk = cache.delta[k];
      const double tk = std::exp(-depth[k]);
      const double ek = std::exp(-s.density * dk);
      const double dsigma = dk * (g[k] * tk * ek - tail);
      tail += g[k] * wts[k];
      if (cache.field.inside[col]) {
        dout(3, static_cast<long>(col)) = dsigma * sigmoid(cache.field.out(3, static_cast<long>(col)));
      }
      // ds_k = tau_k * dI_s (only class y nonzero); through softmax.
      const double dsy = wts[k] * g_sem;
      for (int c = 0; c < c_count; ++c) {
        const double jac = s.semantic[c] * ((c == y ? 1.0 : 0.0) - s.semantic[y]);
        dout(4 + cfg.feature_dim + c, static_cast<long>(col)) = dsy * jac;
      }
    }
  }

  const ParamSet& p = params.tensors;
  ConstRowMap w1(p[l.fc1_w].data().data(), cfg.hidden, cfg.plane_channels);
  ConstRowMap w2(p[l.fc2_w].data().data(), outputs, cfg.hidden);
  const Eigen::MatrixXd h =
      cache.field.hpre.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
  RowMap(grads->mutable_at(l.fc2_w).data().data(), outputs, cfg.hidden).noalias() +=
      dout * h.transpose();
  add_row_sums(dout, grads->mutable_at(l.fc2_b).data().data());
  Eigen::MatrixXd dh = w2.transpose() * dout;
  for (long j = 0; j < dh.cols(); ++j) {
    for (long i = 0; i < dh.rows(); ++i) {
      if (!(cache.field.hpre(i, j) > 0.0)) dh(i, j) *= kLeakySlope;
    }
  }
  RowMap(grads->mutable_at(l.fc1_w).data().data(), cfg.hidden, cfg.plane_channels).noalias() +=
      dh * cache.field.feats.transpose();
  add_row_sums(dh, grads->mutable_at(l.fc1_b).data().data());
  const Eigen::MatrixXd dfeats = w1.transpose() * dh;

  std::array<std::vector<double>, 3> dplanes;
  for (auto& dp : dplanes) dp.assign(tp.planes[0].size(), 0.0);
  for (long col = 0; col < m; ++col) {
    const auto& taps = cache.field.taps[col];
    for (int pl = 0; pl < 3; ++pl) {
      for (int k = 0; k < 4; ++k) {
        const double wt = taps[pl].weight[k];
        if (wt == 0.0) continue;
        double* dst = dplanes[pl].data() + static_cast<std::size_t>(taps[pl].texel[k]) * tp.channels;
        for (int f = 0; f < tp.channels; ++f) dst[f] += wt * dfeats(f, col);
      }
    }
  }
  const std::vector<double> dw = synth_backward(params, l, w, mod, dplanes, *grads);
  encode_backward(params, l, etape, dw, *grads);
  return loss;
}

Mask23DParams pretrain_semantic(const Mask23DParams& params, const std::vector<SegMask>& masks,
                                int steps, const PretrainOptions& options) {
  if (params.frozen()) throw StateError("pretrain_semantic called on frozen teacher parameters");
  if (masks.empty()) throw ConfigError("pretrain_semantic needs at least one mask");
  if (steps < 0 || options.batch_size < 1) throw ConfigError("invalid pretraining schedule");
  Mask23DParams out = params;
  AdamConfig adam;
  adam.learning_rate = options.learning_rate;
  AdamState state = AdamState::for_params(out.tensors);
  ParamSet grads = out.tensors.zeros_like();
  std::size_t cursor = 0;
  for (int step = 0; step < steps; ++step) {
    grads.set_zero();
    for (int b = 0; b < options.batch_size; ++b, ++cursor) {
      semantic_render_loss(out, masks[cursor % masks.size()], options, &grads);
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      for (double& g : grads.mutable_at(i).data()) g /= options.batch_size;
    }
    adam_step(out.tensors, state, grads, adam);
  }
  out.tensors.freeze();
  return out;
}

}  // namespace s3d
