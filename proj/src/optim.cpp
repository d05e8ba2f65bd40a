#include "s3d/optim.hpp"

#include <cmath>

#include "s3d/error.hpp"

namespace s3d {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(stabilizer > 0.0)) throw ConfigError("stabilizer must be > 0");
}

void adam_step(ParamSet& params, AdamState& state, const ParamSet& grads,
               const AdamConfig& cfg) {
  if (params.frozen()) throw StateError("adam_step on frozen parameters");
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ConfigError("optimizer state does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.mutable_at(i).data();
    auto m = state.m.mutable_at(i).data();
    auto v = state.v.mutable_at(i).data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.stabilizer);
    }
  }
}

}  // namespace s3d
