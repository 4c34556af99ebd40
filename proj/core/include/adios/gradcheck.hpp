#pragma once

#include <functional>
#include <map>
#include <string>

#include "adios/params.hpp"

namespace adios {

struct GradCheckReport {
  std::map<std::string, double> max_rel_err;  // per parameter tensor
  double worst = 0.0;
  std::string worst_param;
  bool pass = false;
  double eps = 0.0;
  double tol = 0.0;
};

/// Central finite differences of a deterministic scalar loss with respect to
/// every trainable scalar in `params`. The loss function must not retain
/// state between calls. Used as the independent oracle for backprop.
template <typename T>
ParamSet<T> finite_diff_grad(const std::function<T(const ParamSet<T>&)>& loss_fn,
                             ParamSet<T>& params, T eps) {
  check(eps > T(0), "finite_diff_grad: eps must be positive");
  ParamSet<T> grads;
  for (auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    Tensor<T> g(entry.value.shape);
    for (int64_t i = 0; i < entry.value.numel(); ++i) {
      T saved = entry.value[i];
      entry.value[i] = saved + eps;
      T hi = loss_fn(params);
      entry.value[i] = saved - eps;
      T lo = loss_fn(params);
      entry.value[i] = saved;
      if (!std::isfinite(static_cast<double>(hi)) || !std::isfinite(static_cast<double>(lo)))
        throw ConfigError("finite_diff_grad: non-finite loss when perturbing '" + name +
                          "' at index " + std::to_string(i));
      g[i] = (hi - lo) / (T(2) * eps);
    }
    grads.add(name, std::move(g));
  }
  return grads;
}

/// Relative error |a - n| / max(|a|, |n|, 1e-12) between analytic and
/// numerical gradients, reported per parameter; passes iff the max is
/// within tol.
template <typename T>
GradCheckReport grad_check(const std::function<T(const ParamSet<T>&)>& loss_fn,
                           const std::function<ParamSet<T>(const ParamSet<T>&)>& analytic_grad,
                           ParamSet<T> params, T eps, double tol) {
  GradCheckReport report;
  report.eps = static_cast<double>(eps);
  report.tol = tol;
  ParamSet<T> analytic = analytic_grad(params);
  ParamSet<T> numeric = finite_diff_grad<T>(loss_fn, params, eps);
  for (const auto& [name, entry] : numeric) {
    check(analytic.has(name), "grad_check: analytic gradient missing for '" + name + "'");
    const Tensor<T>& a = analytic.at(name);
    const Tensor<T>& n = entry.value;
    check(a.same_shape(n), "grad_check: gradient shape mismatch for '" + name + "'");
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      double av = static_cast<double>(a[i]);
      double nv = static_cast<double>(n[i]);
      double denom = std::max({std::abs(av), std::abs(nv), 1e-12});
      worst = std::max(worst, std::abs(av - nv) / denom);
    }
    report.max_rel_err[name] = worst;
    if (worst > report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  report.pass = report.worst <= tol;
  return report;
}

}  // namespace adios
