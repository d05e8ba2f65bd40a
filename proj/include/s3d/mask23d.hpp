#pragma once

// Frozen mask-to-3D teacher: a conditional style encoder, style-modulated
// tri-plane synthesis, a small neural field and emission-absorption volume
// rendering of color, semantics and features, plus a toy 2x upsampler.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "s3d/imagery.hpp"
#include "s3d/nn.hpp"
#include "s3d/style.hpp"

namespace s3d {

struct Mask23DConfig {
  int mask_size = 64;
  int num_classes = 6;
  int latent_dim = 16;
  int style_rows = 7;    // L
  int style_dim = 64;    // D
  int plane_res = 16;    // R
  int plane_channels = 8;  // F
  int hidden = 32;
  int feature_dim = 8;   // l
  std::vector<int> encoder_channels = {8, 16, 16, 16};  // stride-2 convs

  void validate() const;
  int encoder_output_size() const;  // spatial size after the strided stack
  int field_outputs() const { return 4 + feature_dim + num_classes; }

  friend bool operator==(const Mask23DConfig&, const Mask23DConfig&) = default;
};

struct Mask23DParams {
  Mask23DConfig config;
  ParamSet tensors;  // frozen() doubles as the module's frozen flag

  bool frozen() const { return tensors.frozen(); }
};

struct LatentCode {
  std::vector<double> data;
};

// Three R x R x F planes: XY indexed by (x, y), XZ by (x, z), YZ by (y, z).
// Storage per plane is [i][j][f] with i along the first coordinate.
struct TriPlane {
  int res = 0;
  int channels = 0;
  std::array<std::vector<double>, 3> planes;

  double at(int plane, int i, int j, int f) const {
    return planes[plane][(static_cast<std::size_t>(i) * res + j) * channels + f];
  }
};

struct FieldSample {
  std::array<double, 3> color{};
  double density = 0.0;
  std::vector<double> feature;
  std::vector<double> semantic;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Camera {
  Vec3 position{0.0, 0.0, 3.0};
  Vec3 look_at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double fov_deg = 40.0;
  int width = 64;
  int height = 64;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

struct RenderConfig {
  int samples_per_ray = 16;
  double near = 1.2;
  double far = 4.8;
  std::array<double, 3> background{1.0, 1.0, 1.0};

  void validate() const;
};

struct RayResult {
  std::array<double, 3> color{};
  std::vector<double> semantic;
  std::vector<double> feature;
  double weight_sum = 0.0;
};

// Per-sample quantities behind a RayResult.
struct RayTrace {
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<double> density;
  std::vector<double> weights;
  RayResult result;
};

struct RenderOutput {
  Tensor color;       // (H, W, 3)
  Tensor semantic;    // (H, W, C)
  Tensor feature;     // (H, W, l)
  Tensor weight_sum;  // (H, W)
};

struct UpsampledOutput {
  Tensor color;     // (2H, 2W, 3)
  Tensor semantic;  // (2H, 2W, C)
};

// Deterministic random weights; the upsampler starts as the identity on
// color. init_frozen additionally freezes the result.
Mask23DParams init_teacher(const Mask23DConfig& config, std::uint64_t seed);
Mask23DParams init_frozen(const Mask23DConfig& config, std::uint64_t seed);

StyleVector encode(const Mask23DParams& params, const SegMask& mask,
                   const LatentCode& z);
// encode with z = 0.
StyleVector style_target(const Mask23DParams& params, const SegMask& mask);
LatentCode sample_latent(const Mask23DConfig& config, std::uint64_t seed);

// plane_p = base_p * (1 + sum_r scale_r) + sum_r shift_r over the rows r
// with r mod 3 == p, where scale_r and shift_r are affine in row r of w.
TriPlane synth_triplane(const Mask23DParams& params, const StyleVector& w);

// Points are clamped to [-1, 1]^3; each plane is sampled bilinearly with
// texel centers at (2i + 1) / R - 1 and edge clamping; the three F-vectors
// are summed.
std::vector<double> sample_triplane(const TriPlane& planes, const Vec3& p);

// Two-layer MLP on the sampled features: logistic color, softplus density
// (zero outside the [-1, 1]^3 scene box), raw features, softmax semantics.
FieldSample field_eval(const Mask23DParams& params, const TriPlane& planes,
                       const Vec3& p);

// Pinhole rays through pixel centers, row-major from the top-left pixel.
std::vector<Ray> make_rays(const Camera& camera);
Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius,
                    double fov_deg, int size);

// Emission-absorption quadrature over given samples:
//   tau_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j);
// color is composited over `background` with the residual 1 - sum tau.
RayResult composite(std::span<const FieldSample> samples,
                    std::span<const double> deltas,
                    const std::array<double, 3>& background,
                    std::vector<double>* weights = nullptr);

// Sample depths t_i = near + (i + 0.5)(far - near)/N; every delta is
// (far - near)/N.
RayTrace trace_ray(const Mask23DParams& params, const TriPlane& planes,
                   const Ray& ray, const RenderConfig& rcfg);
RayResult render_ray(const Mask23DParams& params, const TriPlane& planes,
                     const Ray& ray, const RenderConfig& rcfg);

RenderOutput render_image(const Mask23DParams& params, const StyleVector& w,
                          const Camera& camera, const RenderConfig& rcfg);

// 2x nearest-neighbour enlargement, then one 3x3 conv over
// [color, features] for color; semantics use the enlargement only.
UpsampledOutput upsample(const Mask23DParams& params, const RenderOutput& out);

struct PretrainOptions {
  int render_size = 32;
  int batch_size = 4;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  RenderConfig render;
};

// Canonical frontal view used to tie rendered semantics to the input mask.
Camera frontal_camera(int size);
// Nearest-neighbour (pixel-center) resampling of a mask.
SegMask resample_mask(const SegMask& mask, int size);

// Mean per-pixel cross-entropy between the frontal rendered semantic image
// (clamped at 1e-12) and `mask` resampled to the render size. With `grads`
// non-null, accumulates d(loss)/d(params) into it.
double semantic_render_loss(const Mask23DParams& params, const SegMask& mask,
                            const PretrainOptions& options,
                            ParamSet* grads = nullptr);

// Fits the frontal semantic rendering to the masks with Adam for `steps`
// mini-batches, then freezes. Throws StateError on frozen input.
Mask23DParams pretrain_semantic(const Mask23DParams& params,
                                const std::vector<SegMask>& masks, int steps,
                                const PretrainOptions& options = {});

}  // namespace s3d
