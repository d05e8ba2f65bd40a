#include "s3d/unet.hpp"

#include <algorithm>

#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

void UNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("unet: " + m); };
  if (depth < 1) fail("depth must be >= 1");
  if (input_size < 2 || (input_size & (input_size - 1)) != 0) {
    fail("input_size must be a power of two");
  }
  if (depth >= 30 || input_size < (1 << depth)) fail("input_size must be >= 2^depth");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (style_rows < 1 || style_dim < 1) fail("style shape must be positive");
}

UNetConfig UNetConfig::paper_scale() {
  UNetConfig c;
  c.input_size = 512;
  c.depth = 7;
  c.base_channels = 8;
  c.style_rows = 7;
  c.style_dim = 512;
  return c;
}

namespace {

struct Block {
  Conv2d conv1;
  Conv2d conv2;
};

struct Layers {
  std::vector<Block> encoder;
  Block middle;
  Linear proj;
  Linear unproj;
  std::vector<Block> decoder;  // indexed by level
  Conv2d head;
};

using Shape = std::vector<std::size_t>;

// Walks the architecture in registration order. `visit_conv` and
// `visit_linear` receive (name, in, out[, kernel]).
template <typename ConvFn, typename LinearFn>
Layers walk(const UNetConfig& cfg, ConvFn&& visit_conv, LinearFn&& visit_linear) {
  Layers l;
  int cin = 1;
  for (int k = 0; k < cfg.depth; ++k) {
    const int c = cfg.level_channels(k);
    const std::string p = "enc" + std::to_string(k);
    Block b{visit_conv(p + ".conv1", cin, c, 3), visit_conv(p + ".conv2", c, c, 3)};
    l.encoder.push_back(b);
    cin = c;
  }
  const int cb = cfg.bottleneck_channels();
  l.middle = {visit_conv("mid.conv1", cin, cb, 3), visit_conv("mid.conv2", cb, cb, 3)};
  l.proj = visit_linear("proj", cfg.bottleneck_features(), cfg.embedding_size());
  l.unproj = visit_linear("unproj", cfg.embedding_size(), cfg.bottleneck_features());
  l.decoder.resize(cfg.depth);
  int below = cb;
  for (int k = cfg.depth - 1; k >= 0; --k) {
    const int c = cfg.level_channels(k);
    const std::string p = "dec" + std::to_string(k);
    l.decoder[k] = {visit_conv(p + ".conv1", below + c, c, 3),
                    visit_conv(p + ".conv2", c, c, 3)};
    below = c;
  }
  l.head = visit_conv("head", below, cfg.num_classes, 1);
  return l;
}

Conv2d describe_conv(int cin, int cout, int k) {
  Conv2d c;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel = k;
  c.stride = 1;
  c.pad = k / 2;
  return c;
}

Layers bind(const UNetConfig& cfg, const ParamSet& params) {
  auto check = [&](const std::string& name, const Shape& shape) {
    const std::size_t i = params.index_of(name);
    if (params[i].shape() != shape) {
      throw ConfigError("parameter " + name + " has wrong shape for the config");
    }
    return i;
  };
  return walk(
      cfg,
      [&](const std::string& name, int cin, int cout, int k) {
        Conv2d c = describe_conv(cin, cout, k);
        c.weight = check(name + ".w", {Shape::value_type(cout), Shape::value_type(cin),
                                       Shape::value_type(k), Shape::value_type(k)});
        c.bias = check(name + ".b", {Shape::value_type(cout)});
        return c;
      },
      [&](const std::string& name, int in, int out) {
        Linear l;
        l.in_features = in;
        l.out_features = out;
        l.weight = check(name + ".w", {Shape::value_type(out), Shape::value_type(in)});
        l.bias = check(name + ".b", {Shape::value_type(out)});
        return l;
      });
}

void lrelu(const FeatureMap& pre, FeatureMap& act) {
  act = pre;
  leaky_relu_inplace(act.data);
}

void run_block(const ParamSet& p, const Block& b, const FeatureMap& x,
               UNetTape::Level& lv) {
  lv.input = x;
  lv.pre1 = b.conv1.forward(p, x);
  lrelu(lv.pre1, lv.act1);
  lv.pre2 = b.conv2.forward(p, lv.act1);
  lrelu(lv.pre2, lv.act2);
}

// dL/d(block input) given dL/d(act2).
FeatureMap block_backward(const ParamSet& p, const Block& b,
                          const UNetTape::Level& lv, FeatureMap dact2,
                          ParamSet& grads) {
  leaky_relu_backward_inplace(lv.pre2.data, dact2.data);
  FeatureMap dact1 = b.conv2.backward(p, lv.act1, dact2, grads);
  leaky_relu_backward_inplace(lv.pre1.data, dact1.data);
  return b.conv1.backward(p, lv.input, dact1, grads);
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(
    const UNetConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  walk(
      cfg,
      [&](const std::string& name, int cin, int cout, int k) {
        out.emplace_back(name + ".w", Shape{Shape::value_type(cout), Shape::value_type(cin),
                                            Shape::value_type(k), Shape::value_type(k)});
        out.emplace_back(name + ".b", Shape{Shape::value_type(cout)});
        return Conv2d{};
      },
      [&](const std::string& name, int in, int outf) {
        out.emplace_back(name + ".w", Shape{Shape::value_type(outf), Shape::value_type(in)});
        out.emplace_back(name + ".b", Shape{Shape::value_type(outf)});
        return Linear{};
      });
  return out;
}

UNetParams init_params(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNetParams params{config, {}};
  std::uint64_t ordinal = 0;
  walk(
      config,
      [&](const std::string& name, int cin, int cout, int k) {
        return Conv2d::create(params.tensors, name, cin, cout, k, 1, k / 2,
                              rng::derive(seed, {ordinal++}));
      },
      [&](const std::string& name, int in, int out) {
        return Linear::create(params.tensors, name, in, out,
                              rng::derive(seed, {ordinal++}));
      });
  return params;
}

UNetOutput forward(const UNetParams& params, const Sketch& sketch) {
  UNetTape tape;
  return forward(params, sketch, tape);
}

UNetOutput forward(const UNetParams& params, const Sketch& sketch, UNetTape& tape) {
  const UNetConfig& cfg = params.config;
  if (sketch.width() != cfg.input_size || sketch.height() != cfg.input_size) {
    throw ConfigError("sketch is " + std::to_string(sketch.width()) + "x" +
                      std::to_string(sketch.height()) + ", network expects " +
                      std::to_string(cfg.input_size) + "x" +
                      std::to_string(cfg.input_size));
  }
  const Layers layers = bind(cfg, params.tensors);
  const ParamSet& p = params.tensors;

  FeatureMap x(1, cfg.input_size, cfg.input_size);
  std::copy(sketch.data().begin(), sketch.data().end(), x.data.begin());

  tape.encoder.assign(cfg.depth, {});
  for (int k = 0; k < cfg.depth; ++k) {
    auto& lv = tape.encoder[k];
    run_block(p, layers.encoder[k], x, lv);
    x = maxpool2(lv.act2, lv.pool_argmax);
  }
  run_block(p, layers.middle, x, tape.middle);
  tape.bottleneck = tape.middle.act2.data;

  std::vector<double> emb = layers.proj.forward(p, tape.bottleneck);
  tape.unproj_pre = layers.unproj.forward(p, emb);
  const int s = cfg.bottleneck_size();
  tape.unproj_act = FeatureMap(cfg.bottleneck_channels(), s, s);
  tape.unproj_act.data = tape.unproj_pre;
  leaky_relu_inplace(tape.unproj_act.data);

  tape.decoder.assign(cfg.depth, {});
  FeatureMap prev = tape.unproj_act;
  for (int k = cfg.depth - 1; k >= 0; --k) {
    auto& lv = tape.decoder[k];
    run_block(p, layers.decoder[k],
              concat_channels(upsample2(prev), tape.encoder[k].act2), lv);
    prev = lv.act2;
  }
  tape.head_input = prev;
  const FeatureMap chw = layers.head.forward(p, prev);

  const int n = cfg.input_size;
  const int c = cfg.num_classes;
  Tensor logits({std::size_t(n), std::size_t(n), std::size_t(c)});
  for (int k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < chw.plane(); ++i) {
      logits[i * c + k] = chw.data[k * chw.plane() + i];
    }
  }
  return {std::move(logits),
          BottleneckEmbedding(cfg.style_rows, cfg.style_dim, std::move(emb))};
}

void backward(const UNetParams& params, const UNetTape& tape,
              const Tensor& dlogits, const std::vector<double>& dembedding,
              ParamSet& grads) {
  const UNetConfig& cfg = params.config;
  const Layers layers = bind(cfg, params.tensors);
  const ParamSet& p = params.tensors;
  const int n = cfg.input_size;
  const int c = cfg.num_classes;
  if (dlogits.size() != static_cast<std::size_t>(n) * n * c) {
    throw ConfigError("logit gradient has the wrong size");
  }

  FeatureMap dchw(c, n, n);
  for (int k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < dchw.plane(); ++i) {
      dchw.data[k * dchw.plane() + i] = dlogits[i * c + k];
    }
  }
  FeatureMap dprev = layers.head.backward(p, tape.head_input, dchw, grads);

  std::vector<FeatureMap> dskip(cfg.depth);
  for (int k = 0; k < cfg.depth; ++k) {
    const auto& lv = tape.decoder[k];
    FeatureMap dcat = block_backward(p, layers.decoder[k], lv, std::move(dprev), grads);
    FeatureMap dup;
    split_channels(dcat, dcat.channels - cfg.level_channels(k), dup, dskip[k]);
    dprev = upsample2_backward(dup);
  }

  std::vector<double> du = std::move(dprev.data);
  leaky_relu_backward_inplace(tape.unproj_pre, du);
  // Embedding value is needed as the unproj input; recompute it.
  const std::vector<double> emb = layers.proj.forward(p, tape.bottleneck);
  std::vector<double> demb = layers.unproj.backward(p, emb, du, grads);
  if (!dembedding.empty()) {
    if (dembedding.size() != demb.size()) {
      throw ConfigError("embedding gradient has the wrong size");
    }
    for (std::size_t i = 0; i < demb.size(); ++i) demb[i] += dembedding[i];
  }
  FeatureMap dbott = tape.middle.act2;
  dbott.data = layers.proj.backward(p, tape.bottleneck, demb, grads);

  FeatureMap dx = block_backward(p, layers.middle, tape.middle, std::move(dbott), grads);
  for (int k = cfg.depth - 1; k >= 0; --k) {
    const auto& lv = tape.encoder[k];
    FeatureMap dact2 = maxpool2_backward(lv.act2, lv.pool_argmax, dx);
    for (std::size_t i = 0; i < dact2.data.size(); ++i) dact2.data[i] += dskip[k].data[i];
    dx = block_backward(p, layers.encoder[k], lv, std::move(dact2), grads);
  }
}

std::pair<SegMask, ProbMap> predict_mask(const UNetParams& params,
                                         const Sketch& sketch) {
  const UNetOutput out = forward(params, sketch);
  ProbMap probs = ProbMap::softmax(out.logits);
  SegMask mask = argmax(probs);
  return {std::move(mask), std::move(probs)};
}

}  // namespace s3d
