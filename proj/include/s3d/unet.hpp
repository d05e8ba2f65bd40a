#pragma once

// Sketch-to-mask U-Net. The innermost features are projected to an L x D
// embedding shaped like the teacher's style vector, and the decoder starts
// from the back-projection of that embedding.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s3d/imagery.hpp"
#include "s3d/nn.hpp"
#include "s3d/style.hpp"

namespace s3d {

struct UNetConfig {
  int input_size = 64;
  int depth = 4;
  int base_channels = 8;
  int num_classes = 6;
  int style_rows = 7;
  int style_dim = 64;

  void validate() const;
  int level_channels(int level) const { return base_channels << level; }
  int bottleneck_channels() const { return base_channels << depth; }
  int bottleneck_size() const { return input_size >> depth; }
  int bottleneck_features() const {
    return bottleneck_channels() * bottleneck_size() * bottleneck_size();
  }
  int embedding_size() const { return style_rows * style_dim; }

  // 512 input, seven encoder-decoder pairs, 7 x 512 embedding.
  static UNetConfig paper_scale();

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

struct UNetParams {
  UNetConfig config;
  ParamSet tensors;
};

struct UNetOutput {
  Tensor logits;  // (H, W, C)
  BottleneckEmbedding embedding;
};

// Activations retained for the backward pass.
struct UNetTape {
  struct Level {
    FeatureMap input, pre1, act1, pre2, act2;
    std::vector<std::uint32_t> pool_argmax;  // encoder only
  };
  std::vector<Level> encoder;  // depth entries, act2 doubles as the skip
  Level middle;
  std::vector<double> bottleneck;      // flattened middle.act2
  std::vector<double> unproj_pre;      // before activation
  FeatureMap unproj_act;
  std::vector<Level> decoder;          // indexed by level
  FeatureMap head_input;
};

// Conv kernels Xavier-uniform, biases zero; deterministic in (config, seed).
UNetParams init_params(const UNetConfig& config, std::uint64_t seed);

UNetOutput forward(const UNetParams& params, const Sketch& sketch);
UNetOutput forward(const UNetParams& params, const Sketch& sketch, UNetTape& tape);

// Accumulates dL/dparams into `grads` given dL/dlogits (H, W, C) and
// dL/dembedding (L*D, may be empty for zero).
void backward(const UNetParams& params, const UNetTape& tape,
              const Tensor& dlogits, const std::vector<double>& dembedding,
              ParamSet& grads);

// Softmax probabilities and argmax labels (ties to the lower class).
std::pair<SegMask, ProbMap> predict_mask(const UNetParams& params,
                                         const Sketch& sketch);

// Parameter names in registration order, with shapes, for a config.
std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(
    const UNetConfig& config);

}  // namespace s3d
