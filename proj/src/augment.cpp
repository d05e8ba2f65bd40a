#include "s3d/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

void AugmentPolicy::validate() const {
  if (p_identity < 0 || p_dilate < 0 || p_erode < 0 ||
      std::abs(p_identity + p_dilate + p_erode - 1.0) > 1e-9) {
    throw ConfigError("augment probabilities must be nonnegative and sum to 1");
  }
  for (int k : {dilate_kernel, erode_kernel}) {
    if (k < 1 || k % 2 == 0) {
      throw ConfigError("augment kernel must be odd and >= 1, got " +
                        std::to_string(k));
    }
  }
  if (!(binarize_threshold > 0.0 && binarize_threshold <= 1.0)) {
    throw ConfigError("binarize_threshold must lie in (0, 1]");
  }
}

Sketch binarize(const Sketch& sketch, double threshold) {
  std::vector<double> out(sketch.pixel_count());
  const auto in = sketch.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] >= threshold ? 1.0 : 0.0;
  return Sketch(sketch.width(), sketch.height(), std::move(out));
}

namespace {

// Separable rank filter; on binary input the square max (min) equals the
// row pass followed by the column pass.
template <typename Op>
Sketch rank_filter(const Sketch& sketch, int kernel, double threshold, Op op) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("morphology kernel must be odd and >= 1, got " +
                      std::to_string(kernel));
  }
  const int w = sketch.width();
  const int h = sketch.height();
  const int r = kernel / 2;
  const Sketch bin = binarize(sketch, threshold);
  const auto src = bin.data();
  std::vector<double> rows(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = src[static_cast<std::size_t>(y) * w + x];
      for (int d = -r; d <= r; ++d) {
        const int xx = std::clamp(x + d, 0, w - 1);
        acc = op(acc, src[static_cast<std::size_t>(y) * w + xx]);
      }
      rows[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = rows[static_cast<std::size_t>(y) * w + x];
      for (int d = -r; d <= r; ++d) {
        const int yy = std::clamp(y + d, 0, h - 1);
        acc = op(acc, rows[static_cast<std::size_t>(yy) * w + x]);
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return Sketch(w, h, std::move(out));
}

}  // namespace

Sketch dilate(const Sketch& sketch, int kernel, double threshold) {
  return rank_filter(sketch, kernel, threshold,
                     [](double a, double b) { return std::max(a, b); });
}

Sketch erode(const Sketch& sketch, int kernel, double threshold) {
  return rank_filter(sketch, kernel, threshold,
                     [](double a, double b) { return std::min(a, b); });
}

AugmentBranch draw_branch(const AugmentPolicy& policy, std::uint64_t seed) {
  const double u = rng::uniform_at(seed, 0);
  if (u < policy.p_identity) return AugmentBranch::kIdentity;
  if (u < policy.p_identity + policy.p_dilate) return AugmentBranch::kDilate;
  return AugmentBranch::kErode;
}

Sketch apply_branch(const Sketch& sketch, const AugmentPolicy& policy,
                    AugmentBranch branch) {
  switch (branch) {
    case AugmentBranch::kDilate:
      return dilate(sketch, policy.dilate_kernel, policy.binarize_threshold);
    case AugmentBranch::kErode:
      return erode(sketch, policy.erode_kernel, policy.binarize_threshold);
    case AugmentBranch::kIdentity:
      break;
  }
  return binarize(sketch, policy.binarize_threshold);
}

Sketch random_augment(const Sketch& sketch, const AugmentPolicy& policy,
                      std::uint64_t seed) {
  policy.validate();
  return apply_branch(sketch, policy, draw_branch(policy, seed));
}

}  // namespace s3d
