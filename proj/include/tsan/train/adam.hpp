#pragma once

#include <cmath>

#include "tsan/nn/parameter.hpp"

namespace tsan {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Step schedule: lr0 * 0.5^floor(epoch / halve_every).
inline double lr_at(double lr0, long long epoch, long long halve_every = 200) {
  contract(epoch >= 0 && halve_every > 0, "lr_at: bad arguments");
  return lr0 * std::pow(0.5, static_cast<double>(epoch / halve_every));
}

// Standard bias-corrected Adam over every registered parameter; gradients
// are zeroed afterwards. t is the 1-based global step count.
template <typename T>
void adam_step(ParamStore<T>& store, long long t, double lr, const AdamConfig& cfg = {}) {
  contract(t >= 1, "adam_step: t must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.items()) {
    auto& value = p->value.data;
    auto& grad = p->grad;
    auto& m = p->m;
    auto& v = p->v;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
      grad[i] = T(0);
    }
  }
}

}  // namespace tsan
