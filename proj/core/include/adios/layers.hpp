#pragma once

#include "adios/nn_ops.hpp"
#include "adios/params.hpp"
#include "adios/random.hpp"

namespace adios {

/// Binds a ParamSet to autodiff leaves for one forward/backward pass.
/// Leaves are created on first use and shared across repeated forwards in
/// the same pass, so gradients from N masked views accumulate. A frozen
/// workspace produces constant leaves: its parameters never enter the tape.
template <typename T>
class Workspace {
public:
  Workspace(ParamSet<T>& params, bool trainable) : params_(&params), trainable_(trainable) {}

  ag::Var<T> leaf(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const auto& entry = params_->entry(name);
    auto v = ag::leaf(entry.value, trainable_ && entry.trainable);
    leaves_.emplace(name, v);
    return v;
  }

  /// Gradients accumulated by backward(), zeros for untouched tensors.
  ParamSet<T> grads() const {
    ParamSet<T> out;
    for (const auto& [name, v] : leaves_) {
      if (!v->trainable_leaf) continue;
      if (v->grad.shape == v->value.shape)
        out.add(name, v->grad);
      else
        out.add(name, Tensor<T>(v->value.shape));
    }
    return out;
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& [name, v] : leaves_) {
      if (!v->trainable_leaf || v->grad.shape != v->value.shape) continue;
      for (int64_t i = 0; i < v->grad.numel(); ++i)
        s += static_cast<double>(v->grad[i]) * static_cast<double>(v->grad[i]);
    }
    return std::sqrt(s);
  }

  ParamSet<T>& params() { return *params_; }
  bool trainable() const { return trainable_; }

private:
  ParamSet<T>* params_;
  bool trainable_;
  std::map<std::string, ag::Var<T>> leaves_;
};

namespace init {

template <typename T>
Tensor<T> he_normal(const Shape& shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std_dev);
  return t;
}

template <typename T>
Tensor<T> linear_uniform(const Shape& shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace init

/// 3x3 (or kxk) convolution layer; parameters registered under `name`.
template <typename T>
struct Conv2dLayer {
  std::string name;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  void init(ParamSet<T>& ps, Rng& rng) const {
    ps.add(name + ".w", init::he_normal<T>({cout, cin, k, k}, int64_t(cin) * k * k, rng));
    ps.add(name + ".b", Tensor<T>({cout}));
  }
  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& x) const {
    return ag::conv2d(x, ws.leaf(name + ".w"), ws.leaf(name + ".b"), stride, pad);
  }
};

template <typename T>
struct ConvT2dLayer {
  std::string name;
  int cin = 0, cout = 0, k = 3, stride = 2, pad = 1;

  void init(ParamSet<T>& ps, Rng& rng) const {
    ps.add(name + ".w", init::he_normal<T>({cin, cout, k, k}, int64_t(cin) * k * k, rng));
    ps.add(name + ".b", Tensor<T>({cout}));
  }
  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& x, int64_t out_h, int64_t out_w) const {
    return ag::conv2d_transpose(x, ws.leaf(name + ".w"), ws.leaf(name + ".b"), stride, pad, out_h,
                                out_w);
  }
};

template <typename T>
struct LinearLayer {
  std::string name;
  int in = 0, out = 0;

  void init(ParamSet<T>& ps, Rng& rng) const {
    ps.add(name + ".w", init::linear_uniform<T>({out, in}, in, rng));
    ps.add(name + ".b", Tensor<T>({out}));
  }
  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& x) const {
    return ag::linear(x, ws.leaf(name + ".w"), ws.leaf(name + ".b"));
  }
};

template <typename T>
struct GroupNormLayer {
  std::string name;
  int channels = 0, groups = 4;

  void init(ParamSet<T>& ps, Rng&) const {
    ps.add(name + ".g", Tensor<T>({channels}, T(1)));
    ps.add(name + ".b", Tensor<T>({channels}));
  }
  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& x) const {
    return ag::group_norm(x, ws.leaf(name + ".g"), ws.leaf(name + ".b"), groups);
  }
};

}  // namespace adios
