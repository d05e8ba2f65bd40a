#pragma once

// Sketch augmentation by random identity / dilation / erosion.

#include <cstdint>

#include "s3d/imagery.hpp"

namespace s3d {

struct AugmentPolicy {
  double p_identity = 0.5;
  double p_dilate = 0.25;
  double p_erode = 0.25;
  int dilate_kernel = 3;
  int erode_kernel = 7;
  double binarize_threshold = 0.5;

  void validate() const;
};

enum class AugmentBranch { kIdentity, kDilate, kErode };

// Pixels >= threshold become 1, everything else 0.
Sketch binarize(const Sketch& sketch, double threshold = 0.5);

// Max / min over the kernel x kernel square with clamp-to-edge, applied to
// the binarized sketch. Even or non-positive kernels throw ConfigError.
Sketch dilate(const Sketch& sketch, int kernel, double threshold = 0.5);
Sketch erode(const Sketch& sketch, int kernel, double threshold = 0.5);

// Branch drawn from the first element of the SplitMix64 stream of `seed`.
AugmentBranch draw_branch(const AugmentPolicy& policy, std::uint64_t seed);
Sketch apply_branch(const Sketch& sketch, const AugmentPolicy& policy,
                    AugmentBranch branch);
Sketch random_augment(const Sketch& sketch, const AugmentPolicy& policy,
                      std::uint64_t seed);

}  // namespace s3d
