#pragma once

#include <cstdint>

#include "s3d/nn.hpp"

namespace s3d {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double stabilizer = 1e-8;

  void validate() const;
};

// First/second moment accumulators mirroring a ParamSet.
struct AdamState {
  ParamSet m;
  ParamSet v;
  std::int64_t step = 0;

  static AdamState for_params(const ParamSet& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

// Bias-corrected adaptive-moment update:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + stabilizer).
// Throws StateError if `params` is frozen.
void adam_step(ParamSet& params, AdamState& state, const ParamSet& grads,
               const AdamConfig& cfg);

}  // namespace s3d
