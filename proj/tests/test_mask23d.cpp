#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s3d/datagen.hpp"
#include "s3d/error.hpp"
#include "s3d/mask23d.hpp"
#include "s3d/rng.hpp"
#include "s3d/unet.hpp"

using namespace s3d;

namespace {

Mask23DConfig small_config() {
  Mask23DConfig c;
  c.mask_size = 32;
  c.latent_dim = 4;
  c.style_rows = 7;
  c.style_dim = 8;
  c.plane_res = 6;
  c.plane_channels = 4;
  c.hidden = 8;
  c.feature_dim = 3;
  c.encoder_channels = {4, 4};
  return c;
}

SegMask face_mask(int i, int size) { return generate_sample(11, i, size).mask; }

StyleVector random_style(const Mask23DConfig& c, std::uint64_t seed) {
  SplitMix64 g(seed);
  StyleVector w(c.style_rows, c.style_dim);
  for (double& v : w.data) v = g.normal();
  return w;
}

TriPlane random_planes(int res, int channels, std::uint64_t seed) {
  SplitMix64 g(seed);
  TriPlane t;
  t.res = res;
  t.channels = channels;
  for (auto& p : t.planes) {
    p.resize(static_cast<std::size_t>(res) * res * channels);
    for (double& v : p) v = g.uniform(-1.0, 1.0);
  }
  return t;
}

// Bilinear lookup written out directly from the texel-center convention.
double brute_plane(const TriPlane& t, int plane, double u, double v, int f) {
  const int r = t.res;
  auto coord = [r](double a) {
    a = std::min(1.0, std::max(-1.0, a));
    double c = (a + 1.0) * r / 2.0 - 0.5;
    if (c < 0.0) c = 0.0;
    if (c > r - 1) c = r - 1;
    return c;
  };
  const double cu = coord(u), cv = coord(v);
  const int i0 = static_cast<int>(std::floor(cu)), j0 = static_cast<int>(std::floor(cv));
  const int i1 = std::min(i0 + 1, r - 1), j1 = std::min(j0 + 1, r - 1);
  const double a = cu - i0, b = cv - j0;
  return (1 - a) * (1 - b) * t.at(plane, i0, j0, f) + (1 - a) * b * t.at(plane, i0, j1, f) +
         a * (1 - b) * t.at(plane, i1, j0, f) + a * b * t.at(plane, i1, j1, f);
}

FieldSample sample_with(double sigma, std::array<double, 3> color, int classes) {
  FieldSample s;
  s.density = sigma;
  s.color = color;
  s.semantic.assign(classes, 1.0 / classes);
  s.feature.assign(2, 1.0);
  return s;
}

Mask23DParams with_zero_density(Mask23DParams p) {
  const int l = p.config.feature_dim;
  (void)l;
  Tensor& w = p.tensors.mutable_at(p.tensors.index_of("mlp.fc2.w"));
  Tensor& b = p.tensors.mutable_at(p.tensors.index_of("mlp.fc2.b"));
  const std::size_t in = w.dim(1);
  for (std::size_t j = 0; j < in; ++j) w[3 * in + j] = 0.0;
  b[3] = -1000.0;
  return p;
}

}  // namespace

TEST(Mask23DConfig, Validation) {
  Mask23DConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.plane_res = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  RenderConfig r;
  r.samples_per_ray = 1;
  EXPECT_THROW(r.validate(), ConfigError);
  r = RenderConfig{};
  r.near = 2.0;
  r.far = 2.0;
  EXPECT_THROW(r.validate(), ConfigError);
}

TEST(Encode, DeterministicAndShaped) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 3);
  const SegMask m = face_mask(0, 32);
  const LatentCode z = sample_latent(c, 5);
  const StyleVector a = encode(p, m, z);
  EXPECT_EQ(a, encode(p, m, z));
  EXPECT_EQ(a.rows, c.style_rows);
  EXPECT_EQ(a.dim, c.style_dim);
  EXPECT_EQ(a.data.size(), std::size_t(c.style_rows * c.style_dim));
  for (double v : a.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Encode, MatchesUNetEmbeddingShape) {
  Mask23DConfig c;
  UNetConfig u;
  c.style_rows = u.style_rows;
  c.style_dim = u.style_dim;
  const Mask23DParams p = init_frozen(c, 1);
  const StyleVector w = style_target(p, face_mask(1, c.mask_size));
  const UNetOutput out = forward(init_params(u, 1), generate_sample(11, 1, 64).sketch);
  EXPECT_EQ(w.rows, out.embedding.rows);
  EXPECT_EQ(w.dim, out.embedding.dim);
}

TEST(Encode, ShapeMismatchIsConfigError) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 3);
  EXPECT_THROW(encode(p, face_mask(0, 64), sample_latent(c, 1)), ConfigError);
  EXPECT_THROW(encode(p, face_mask(0, 32), LatentCode{{1.0, 2.0}}), ConfigError);
  EXPECT_THROW(encode(p, SegMask(32, 32, 3), sample_latent(c, 1)), ConfigError);
}

TEST(Encode, OneRegionChangeGivesDistinctStyles) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 4);
  for (int i = 0; i < 100; ++i) {
    const SegMask m = face_mask(i, 32);
    std::vector<int> labels(m.labels().begin(), m.labels().end());
    const int x0 = 4 + i % 20, y0 = 4 + (i * 7) % 20;
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 4; ++x) labels[y * 32 + x] = kMouth;
    const SegMask changed(32, 32, kFaceClasses, labels);
    ASSERT_NE(m, changed);
    EXPECT_NE(style_target(p, m), style_target(p, changed)) << "pair " << i;
  }
}

TEST(StyleTarget, EqualsZeroCodeAndIgnoresLatent) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 3);
  const SegMask m = face_mask(2, 32);
  LatentCode zero;
  zero.data.assign(c.latent_dim, 0.0);
  EXPECT_EQ(style_target(p, m), encode(p, m, zero));
  EXPECT_NE(style_target(p, m), encode(p, m, sample_latent(c, 8)));
  EXPECT_EQ(style_target(p, m), style_target(init_frozen(c, 3), m));
}

TEST(SampleLatent, DeterministicPerSeed) {
  const Mask23DConfig c = small_config();
  EXPECT_EQ(sample_latent(c, 3).data, sample_latent(c, 3).data);
  EXPECT_NE(sample_latent(c, 3).data, sample_latent(c, 4).data);
  EXPECT_EQ(sample_latent(c, 3).data.size(), std::size_t(c.latent_dim));
}

TEST(SynthTriplane, ZeroStyleIsBiasOnlyModulation) {
  const Mask23DConfig c = small_config();
  Mask23DParams p = init_teacher(c, 6);
  SplitMix64 g(1);
  for (const char* name : {"tri.scale.b", "tri.shift.b"}) {
    Tensor& t = p.tensors.mutable_at(p.tensors.index_of(name));
    for (double& v : t.values()) v = g.uniform(-0.5, 0.5);
  }
  const TriPlane t = synth_triplane(p, StyleVector(c.style_rows, c.style_dim));
  const Tensor& base = p.tensors.get("tri.base");
  const Tensor& sb = p.tensors.get("tri.scale.b");
  const Tensor& hb = p.tensors.get("tri.shift.b");
  const int r = c.plane_res, f = c.plane_channels;
  ASSERT_EQ(t.res, r);
  ASSERT_EQ(t.channels, f);
  for (int plane = 0; plane < 3; ++plane) {
    ASSERT_EQ(t.planes[plane].size(), std::size_t(r * r * f));
    for (int k = 0; k < f; ++k) {
      double scale = 0.0, shift = 0.0;
      for (int row = plane; row < c.style_rows; row += 3) {
        scale += sb[row * f + k];
        shift += hb[row * f + k];
      }
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const double b0 = base[((plane * r + i) * r + j) * f + k];
          EXPECT_NEAR(t.at(plane, i, j, k), b0 * (1.0 + scale) + shift, 1e-12);
        }
    }
  }
}

TEST(SynthTriplane, RowZeroDrivesXYPlaneOnly) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 6);
  StyleVector a = random_style(c, 2);
  StyleVector b = a;
  for (int d = 0; d < c.style_dim; ++d) b.data[d] += 1.0;
  const TriPlane ta = synth_triplane(p, a), tb = synth_triplane(p, b);
  EXPECT_NE(ta.planes[0], tb.planes[0]);
  EXPECT_EQ(ta.planes[1], tb.planes[1]);
  EXPECT_EQ(ta.planes[2], tb.planes[2]);
}

TEST(SampleTriplane, ConstantPlanes) {
  TriPlane t;
  t.res = 5;
  t.channels = 2;
  for (auto& p : t.planes) p.assign(5 * 5 * 2, 0.75);
  SplitMix64 g(3);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p{g.uniform(-1.5, 1.5), g.uniform(-1.5, 1.5), g.uniform(-1.5, 1.5)};
    const auto v = sample_triplane(t, p);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_NEAR(v[0], 2.25, 1e-15);
    EXPECT_NEAR(v[1], 2.25, 1e-15);
  }
}

TEST(SampleTriplane, TexelCenterIsSumOfTexels) {
  const TriPlane t = random_planes(4, 3, 9);
  auto center = [](int i) { return (2.0 * i + 1.0) / 4.0 - 1.0; };
  const int ix = 1, iy = 3, iz = 0;
  const auto v = sample_triplane(t, Vec3{center(ix), center(iy), center(iz)});
  for (int f = 0; f < 3; ++f) {
    const double expect = t.at(0, ix, iy, f) + t.at(1, ix, iz, f) + t.at(2, iy, iz, f);
    EXPECT_NEAR(v[f], expect, 1e-12);
  }
}

TEST(SampleTriplane, MidpointAveragesNeighbours) {
  const TriPlane t = random_planes(4, 2, 10);
  auto center = [](int i) { return (2.0 * i + 1.0) / 4.0 - 1.0; };
  const double x = 0.5 * (center(1) + center(2));
  const double y = center(0), z = center(3);
  const auto v = sample_triplane(t, Vec3{x, y, z});
  for (int f = 0; f < 2; ++f) {
    const double xy = 0.5 * (t.at(0, 1, 0, f) + t.at(0, 2, 0, f));
    const double xz = 0.5 * (t.at(1, 1, 3, f) + t.at(1, 2, 3, f));
    const double yz = t.at(2, 0, 3, f);
    EXPECT_NEAR(v[f], xy + xz + yz, 1e-12);
  }
}

TEST(SampleTriplane, MatchesBruteForceOracle) {
  const TriPlane t = random_planes(7, 3, 12);
  SplitMix64 g(13);
  for (int n = 0; n < 10000; ++n) {
    const Vec3 p{g.uniform(-1.2, 1.2), g.uniform(-1.2, 1.2), g.uniform(-1.2, 1.2)};
    const auto v = sample_triplane(t, p);
    for (int f = 0; f < 3; ++f) {
      const double expect = brute_plane(t, 0, p.x, p.y, f) + brute_plane(t, 1, p.x, p.z, f) +
                            brute_plane(t, 2, p.y, p.z, f);
      ASSERT_NEAR(v[f], expect, 1e-12) << n;
    }
  }
}

TEST(FieldEval, RangesOnRandomSweep) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 14);
  const TriPlane t = synth_triplane(p, random_style(c, 15));
  SplitMix64 g(16);
  for (int n = 0; n < 10000; ++n) {
    const Vec3 x{g.uniform(-1.0, 1.0), g.uniform(-1.0, 1.0), g.uniform(-1.0, 1.0)};
    const FieldSample s = field_eval(p, t, x);
    ASSERT_GE(s.density, 0.0);
    ASSERT_EQ(s.semantic.size(), std::size_t(c.num_classes));
    ASSERT_EQ(s.feature.size(), std::size_t(c.feature_dim));
    double sum = 0.0;
    for (double v : s.semantic) {
      ASSERT_GE(v, 0.0);
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-6);
    for (double v : s.color) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
  }
}

TEST(FieldEval, NoDensityOutsideSceneBox) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 14);
  const TriPlane t = synth_triplane(p, random_style(c, 15));
  EXPECT_EQ(field_eval(p, t, Vec3{1.2, 0.0, 0.0}).density, 0.0);
  EXPECT_EQ(field_eval(p, t, Vec3{0.0, 0.0, -3.0}).density, 0.0);
}

TEST(MakeRays, CenterPixelAndUnitNorm) {
  Camera cam;
  cam.position = {1.0, 2.0, 3.0};
  cam.look_at = {-0.5, 0.25, 0.0};
  cam.width = 5;
  cam.height = 7;
  const auto rays = make_rays(cam);
  ASSERT_EQ(rays.size(), 35u);
  const double dx = -1.5, dy = -1.75, dz = -3.0;
  const double n = std::sqrt(dx * dx + dy * dy + dz * dz);
  const Ray& mid = rays[3 * 5 + 2];
  EXPECT_NEAR(mid.direction.x, dx / n, 1e-12);
  EXPECT_NEAR(mid.direction.y, dy / n, 1e-12);
  EXPECT_NEAR(mid.direction.z, dz / n, 1e-12);
  for (const Ray& r : rays) {
    const Vec3& d = r.direction;
    EXPECT_NEAR(std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z), 1.0, 1e-9);
    EXPECT_EQ(r.origin.x, 1.0);
  }
}

TEST(MakeRays, TwoByTwoAtNinetyDegrees) {
  Camera cam;  // at (0, 0, 3) looking at the origin, y up
  cam.fov_deg = 90.0;
  cam.width = 2;
  cam.height = 2;
  const auto rays = make_rays(cam);
  ASSERT_EQ(rays.size(), 4u);
  // tan(45 deg) = 1, pixel centers at +-0.5 on the image plane at unit depth.
  const double k = 1.0 / std::sqrt(1.5);
  const double expect[4][3] = {{-0.5 * k, 0.5 * k, -k},
                               {0.5 * k, 0.5 * k, -k},
                               {-0.5 * k, -0.5 * k, -k},
                               {0.5 * k, -0.5 * k, -k}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(rays[i].direction.x, expect[i][0], 1e-12) << i;
    EXPECT_NEAR(rays[i].direction.y, expect[i][1], 1e-12) << i;
    EXPECT_NEAR(rays[i].direction.z, expect[i][2], 1e-12) << i;
  }
}

TEST(MakeRays, DegenerateCamerasRejected) {
  Camera cam;
  cam.up = {0.0, 0.0, 2.0};  // parallel to the view direction
  EXPECT_THROW(make_rays(cam), ConfigError);
  cam = Camera{};
  cam.look_at = cam.position;
  EXPECT_THROW(make_rays(cam), ConfigError);
}

TEST(Composite, EmptySpace) {
  std::vector<FieldSample> s(4, sample_with(0.0, {0.2, 0.4, 0.6}, 3));
  const std::vector<double> d(4, 0.3);
  const RayResult r = composite(s, d, {0.1, 0.2, 0.3});
  EXPECT_EQ(r.weight_sum, 0.0);
  EXPECT_EQ(r.color, (std::array<double, 3>{0.1, 0.2, 0.3}));
  for (double v : r.semantic) EXPECT_EQ(v, 0.0);
}

TEST(Composite, OpaqueLimit) {
  std::vector<FieldSample> s = {sample_with(1e6, {0.9, 0.1, 0.5}, 3),
                                sample_with(5.0, {0.0, 1.0, 0.0}, 3)};
  const std::vector<double> d = {0.5, 0.5};
  const RayResult r = composite(s, d, {1.0, 1.0, 1.0});
  EXPECT_NEAR(r.weight_sum, 1.0, 1e-12);
  EXPECT_NEAR(r.color[0], 0.9, 1e-12);
  EXPECT_NEAR(r.color[1], 0.1, 1e-12);
  EXPECT_NEAR(r.color[2], 0.5, 1e-12);
}

TEST(Composite, TwoHalfTransmittanceSamples) {
  const double delta = 0.25;
  const double sigma = std::numbers::ln2 / delta;
  const std::array<double, 3> c1{0.8, 0.2, 0.4}, c2{0.1, 0.6, 0.9}, bg{0.3, 0.3, 1.0};
  std::vector<FieldSample> s = {sample_with(sigma, c1, 2), sample_with(sigma, c2, 2)};
  std::vector<double> w;
  const RayResult r = composite(s, std::vector<double>{delta, delta}, bg, &w);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0], 0.5, 1e-12);
  EXPECT_NEAR(w[1], 0.25, 1e-12);
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(r.color[k], 0.5 * c1[k] + 0.25 * c2[k] + 0.25 * bg[k], 1e-12);
}

TEST(Composite, TelescopingMonotoneAndSemanticMass) {
  SplitMix64 g(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(g.below(30));
    std::vector<FieldSample> s;
    std::vector<double> d;
    double optical = 0.0;
    for (int i = 0; i < n; ++i) {
      FieldSample f = sample_with(g.uniform(0.0, 4.0), {g.uniform(), g.uniform(), g.uniform()}, 4);
      double tot = 0.0;
      for (double& v : f.semantic) tot += (v = g.uniform());
      for (double& v : f.semantic) v /= tot;
      d.push_back(g.uniform(0.01, 0.5));
      optical += f.density * d.back();
      s.push_back(f);
    }
    const RayResult r = composite(s, d, {1.0, 1.0, 1.0});
    ASSERT_NEAR(r.weight_sum, 1.0 - std::exp(-optical), 1e-12);
    double mass = 0.0;
    for (double v : r.semantic) mass += v;
    ASSERT_NEAR(mass, r.weight_sum, 1e-9);

    const int i = static_cast<int>(g.below(n));
    s[i].density += g.uniform(0.0, 3.0);
    ASSERT_GE(composite(s, d, {1.0, 1.0, 1.0}).weight_sum, r.weight_sum);
  }
}

TEST(TraceRay, MidpointDepthsAndUniformDeltas) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 1);
  const TriPlane t = synth_triplane(p, random_style(c, 1));
  RenderConfig rc;
  rc.samples_per_ray = 8;
  const RayTrace tr = trace_ray(p, t, make_rays(Camera{})[0], rc);
  ASSERT_EQ(tr.t.size(), 8u);
  for (int i = 0; i < 8; ++i) {
    EXPECT_NEAR(tr.t[i], 1.2 + (i + 0.5) * 3.6 / 8, 1e-12);
    EXPECT_NEAR(tr.delta[i], 3.6 / 8, 1e-12);
  }
  double sum = 0.0;
  for (double w : tr.weights) sum += w;
  EXPECT_NEAR(sum, tr.result.weight_sum, 1e-12);
}

TEST(RenderImage, WeightSumsAndSemanticMass) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 2);
  const StyleVector w = style_target(p, face_mask(3, 32));
  const RenderOutput out = render_image(p, w, orbit_camera(20, 10, 3, 40, 12), RenderConfig{});
  ASSERT_EQ(out.color.shape(), (std::vector<std::size_t>{12, 12, 3}));
  ASSERT_EQ(out.semantic.shape(), (std::vector<std::size_t>{12, 12, std::size_t(c.num_classes)}));
  ASSERT_EQ(out.feature.shape(), (std::vector<std::size_t>{12, 12, std::size_t(c.feature_dim)}));
  for (std::size_t px = 0; px < 144; ++px) {
    const double ws = out.weight_sum[px];
    ASSERT_GE(ws, 0.0);
    ASSERT_LE(ws, 1.0 + 1e-6);
    double mass = 0.0;
    for (int k = 0; k < c.num_classes; ++k) {
      const double v = out.semantic[px * c.num_classes + k];
      ASSERT_GE(v, 0.0);
      mass += v;
    }
    ASSERT_NEAR(mass, ws, 1e-9);
  }
  EXPECT_EQ(out.color, render_image(p, w, orbit_camera(20, 10, 3, 40, 12), RenderConfig{}).color);
}

TEST(RenderImage, ZeroDensityShowsBackground) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = with_zero_density(init_teacher(c, 2));
  RenderConfig rc;
  rc.background = {0.25, 0.5, 0.75};
  const RenderOutput out = render_image(p, random_style(c, 3), orbit_camera(0, 0, 3, 40, 8), rc);
  for (std::size_t px = 0; px < 64; ++px) {
    EXPECT_EQ(out.weight_sum[px], 0.0);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(out.color[px * 3 + k], rc.background[k]);
  }
}

TEST(RenderImage, OrbitChangesOutput) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 2);
  for (int i = 0; i < 5; ++i) {
    const StyleVector w = style_target(p, face_mask(i, 32));
    const RenderOutput a = render_image(p, w, orbit_camera(0, 0, 3, 40, 16), RenderConfig{});
    const RenderOutput b = render_image(p, w, orbit_camera(30, 0, 3, 40, 16), RenderConfig{});
    EXPECT_NE(a.color, b.color);
    EXPECT_NE(a.semantic, b.semantic);
  }
}

TEST(Upsample, IdentityInitEnlargesColor) {
  const Mask23DConfig c = small_config();
  const Mask23DParams p = init_frozen(c, 4);
  const RenderOutput out = render_image(p, random_style(c, 5), orbit_camera(0, 0, 3, 40, 6), RenderConfig{});
  const UpsampledOutput up = upsample(p, out);
  ASSERT_EQ(up.color.shape(), (std::vector<std::size_t>{12, 12, 3}));
  ASSERT_EQ(up.semantic.shape(), (std::vector<std::size_t>{12, 12, std::size_t(c.num_classes)}));
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const std::size_t src = std::size_t(y / 2) * 6 + x / 2, dst = std::size_t(y) * 12 + x;
      for (int k = 0; k < 3; ++k)
        ASSERT_NEAR(up.color[dst * 3 + k], out.color[src * 3 + k], 1e-12);
      for (int k = 0; k < c.num_classes; ++k)
        ASSERT_EQ(up.semantic[dst * c.num_classes + k], out.semantic[src * c.num_classes + k]);
    }
  const UpsampledOutput again = upsample(p, out);
  EXPECT_EQ(again.color, up.color);
}

TEST(Teacher, InitFrozenDeterministicAndImmutable) {
  const Mask23DConfig c = small_config();
  Mask23DParams a = init_frozen(c, 7);
  EXPECT_TRUE(a.frozen());
  EXPECT_EQ(a.tensors, init_frozen(c, 7).tensors);
  EXPECT_FALSE(a.tensors == init_frozen(c, 8).tensors);
  EXPECT_THROW(a.tensors.mutable_at(0), StateError);
  EXPECT_FALSE(init_teacher(c, 7).frozen());
}

TEST(Teacher, PretrainRejectsFrozen) {
  const Mask23DConfig c = small_config();
  EXPECT_THROW(pretrain_semantic(init_frozen(c, 1), {face_mask(0, 32)}, 1), StateError);
}

TEST(Teacher, SemanticRenderLossGradientMatchesFiniteDifferences) {
  const Mask23DConfig c = small_config();
  Mask23DParams p = init_teacher(c, 31);
  SplitMix64 g(32);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    if (!p.tensors.name(i).ends_with(".b")) continue;
    for (double& v : p.tensors.mutable_at(i).values()) v = g.uniform(-0.3, 0.3);
  }
  PretrainOptions opt;
  opt.render_size = 4;
  opt.render.samples_per_ray = 6;
  const SegMask m = face_mask(4, 32);
  ParamSet grads = p.tensors.zeros_like();
  semantic_render_loss(p, m, opt, &grads);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const std::size_t n = p.tensors[i].size();
    double worst = 0.0;
    for (std::size_t k = 0; k < n; k += std::max<std::size_t>(1, n / 12)) {
      const double x0 = p.tensors[i][k];
      p.tensors.mutable_at(i)[k] = x0 + h;
      const double up = semantic_render_loss(p, m, opt);
      p.tensors.mutable_at(i)[k] = x0 - h;
      const double down = semantic_render_loss(p, m, opt);
      p.tensors.mutable_at(i)[k] = x0;
      const double fd = (up - down) / (2 * h);
      const double an = grads[i][k];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
    }
    EXPECT_LT(worst, 1e-4) << p.tensors.name(i);
  }
}

TEST(Teacher, PretrainDecreasesCrossEntropy) {
  const Mask23DConfig c;  // desk teacher
  std::vector<SegMask> masks;
  for (int i = 0; i < 32; ++i) masks.push_back(face_mask(i, c.mask_size));
  const Mask23DParams init = init_teacher(c, 41);
  PretrainOptions opt;
  opt.seed = 42;
  auto mean_ce = [&](const Mask23DParams& p) {
    double s = 0.0;
    for (const SegMask& m : masks) s += semantic_render_loss(p, m, opt);
    return s / masks.size();
  };
  const double before = mean_ce(init);
  const Mask23DParams trained = pretrain_semantic(init, masks, 200, opt);
  EXPECT_TRUE(trained.frozen());
  EXPECT_LT(mean_ce(trained), before);
}
