#pragma once

#include <cmath>

#include "adios/params.hpp"

namespace adios {

/// Classic (non-Nesterov) SGD with momentum:
///   v <- momentum * v + g;  p <- p - lr * v
/// Velocity tensors live in `state` under the parameter names and are
/// created on first use. Frozen parameters and parameters without a
/// gradient entry are left untouched.
template <typename T>
void sgd_momentum_step(ParamSet<T>& params, const ParamSet<T>& grads, double lr, double momentum,
                       ParamSet<T>& state) {
  check(momentum >= 0.0 && momentum < 1.0, "sgd_momentum_step: momentum must be in [0,1)");
  for (auto& [name, entry] : params) {
    if (!entry.trainable || !grads.has(name)) continue;
    const Tensor<T>& g = grads.at(name);
    check(g.same_shape(entry.value), "sgd_momentum_step: gradient shape " + shape_str(g.shape) +
                                         " does not match parameter '" + name + "' " +
                                         shape_str(entry.value.shape));
    if (!state.has(name)) state.add(name, Tensor<T>(entry.value.shape), false);
    Tensor<T>& v = state.at(name);
    T mom = static_cast<T>(momentum);
    T step = static_cast<T>(lr);
    for (int64_t i = 0; i < g.numel(); ++i) {
      v[i] = mom * v[i] + g[i];
      entry.value[i] -= step * v[i];
    }
  }
}

/// Linear warmup to base_lr, then cosine decay to zero.
inline double warmup_cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps,
                               double base_lr) {
  check(total_steps > 0, "warmup_cosine_lr: total_steps must be positive");
  check(warmup_steps >= 0 && warmup_steps < total_steps,
        "warmup_cosine_lr: warmup_steps must be in [0, total_steps)");
  check(step >= 0 && step <= total_steps, "warmup_cosine_lr: step out of range");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  double t = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

/// Target-network update: target <- tau * target + (1 - tau) * online.
/// tau = 0 copies the online parameters bit-exactly.
template <typename T>
void ema_update(ParamSet<T>& target, const ParamSet<T>& online, double tau) {
  check(tau >= 0.0 && tau < 1.0, "ema_update: tau must be in [0,1)");
  check(target.size() == online.size(), "ema_update: parameter sets differ in size");
  auto it = online.begin();
  for (auto& [name, entry] : target) {
    check(it != online.end() && it->first == name, "ema_update: name mismatch at '" + name + "'");
    const Tensor<T>& src = it->second.value;
    check(src.same_shape(entry.value), "ema_update: shape mismatch for '" + name + "'");
    if (tau == 0.0) {
      entry.value.data = src.data;
    } else {
      T a = static_cast<T>(tau), b = static_cast<T>(1.0 - tau);
      for (int64_t i = 0; i < src.numel(); ++i) entry.value[i] = a * entry.value[i] + b * src[i];
    }
    ++it;
  }
}

}  // namespace adios
