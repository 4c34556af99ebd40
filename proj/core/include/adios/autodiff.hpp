#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "adios/tensor.hpp"

namespace adios::ag {

/// Reverse-mode autodiff over Tensor<T>. The graph is rebuilt per step
/// (define-by-run); nodes own their values, shared_ptr edges keep
/// intermediate activations alive until backward has run. This is not a
/// general-purpose engine: it implements exactly the operations the
/// training objectives need, each paired with a finite-difference test.

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily, same shape as value
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backprop;  // accumulates into parents' grads
  bool needs_grad = false;
  bool trainable_leaf = false;

  Tensor<T>& ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    return grad;
  }
};

template <typename T>
Var<T> leaf(Tensor<T> value, bool trainable) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->needs_grad = trainable;
  n->trainable_leaf = trainable;
  return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var<T> scalar(T v) {
  return constant(Tensor<T>({1}, std::vector<T>{v}));
}

namespace detail {

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
  n->parents = std::move(parents);
  if (n->needs_grad) n->backprop = std::move(backprop);
  return n;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

}  // namespace detail

/// Backward pass from a scalar root. Accumulates gradients into every
/// reachable node with needs_grad; leaves keep them until read.
template <typename T>
void backward(const Var<T>& root) {
  check(root->value.numel() == 1, "backward: root must be a scalar");
  // Iterative topological order over the needs_grad subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  if (root->needs_grad) stack.push_back({root.get(), 0});
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && seen.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->needs_grad && !seen.count(p)) stack.push_back({p, 0});
      continue;
    }
    seen.insert(node);
    order.push_back(node);
    stack.pop_back();
  }
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

template <typename T>
void zero_grad(const Var<T>& v) {
  v->grad = Tensor<T>();
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = n.parents[static_cast<size_t>(k)];
      if (!p->needs_grad) continue;
      auto& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->needs_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (n.parents[0]->needs_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->needs_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= static_cast<T>(c);
  return detail::make_node<T>(std::move(out), {a}, [c](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * static_cast<T>(c);
  });
}

template <typename T>
Var<T> add_const(const Var<T>& a, double c) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += static_cast<T>(c);
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], T(0));
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += x[i] > T(0) ? n.grad[i] : T(0);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      T y = n.value[i];
      g[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> sin_of(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sin(out[i]);
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * std::cos(x[i]);
  });
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / out[i];
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      T y = n.value[i];
      g[i] += -n.grad[i] * y * y;
    }
  });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(std::max(out[i], static_cast<T>(lo)), static_cast<T>(hi));
  return detail::make_node<T>(std::move(out), {a}, [lo, hi](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] >= static_cast<T>(lo) && x[i] <= static_cast<T>(hi)) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> stop_grad(const Var<T>& a) {
  auto n = std::make_shared<Node<T>>();
  n->value = a->value;
  return n;  // no parents: backward never crosses this node
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return detail::make_node<T>(Tensor<T>({1}, std::vector<T>{s}), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

/// Mean over all but the leading dimension: [B, ...] -> [B].
template <typename T>
Var<T> mean_per_row(const Var<T>& a) {
  check(a->value.ndim() >= 2, "mean_per_row: needs at least 2 dims");
  int64_t b = a->value.dim(0);
  int64_t m = a->value.numel() / b;
  Tensor<T> out({b});
  for (int64_t i = 0; i < b; ++i) {
    T s = 0;
    for (int64_t j = 0; j < m; ++j) s += a->value[i * m + j];
    out[i] = s / static_cast<T>(m);
  }
  return detail::make_node<T>(std::move(out), {a}, [b, m](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < b; ++i) {
      T gi = n.grad[i] / static_cast<T>(m);
      for (int64_t j = 0; j < m; ++j) g[i * m + j] += gi;
    }
  });
}

/// Dot product against a constant tensor; used by per-op gradient tests.
template <typename T>
Var<T> dot_const(const Var<T>& a, const Tensor<T>& w) {
  check(a->value.same_shape(w), "dot_const: shape mismatch");
  T s = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i] * w[i];
  return detail::make_node<T>(Tensor<T>({1}, std::vector<T>{s}), {a}, [w](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0] * w[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  check(shape_numel(s) == a->value.numel(), "reshape: element count mismatch");
  Tensor<T> out(std::move(s), a->value.data);
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix / row ops (embeddings are [B, d] matrices)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(0),
        "matmul: incompatible shapes");
  int64_t m = a->value.dim(0), k = a->value.dim(1), n_ = b->value.dim(1);
  Tensor<T> out({m, n_});
  detail::ConstMatMap<T> am(a->value.ptr(), m, k), bm(b->value.ptr(), k, n_);
  detail::MatMap<T>(out.ptr(), m, n_).noalias() = am * bm;
  return detail::make_node<T>(std::move(out), {a, b}, [m, k, n_](Node<T>& n) {
    detail::ConstMatMap<T> gm(n.grad.ptr(), m, n_);
    if (n.parents[0]->needs_grad) {
      detail::ConstMatMap<T> bm(n.parents[1]->value.ptr(), k, n_);
      detail::MatMap<T>(n.parents[0]->ensure_grad().ptr(), m, k).noalias() += gm * bm.transpose();
    }
    if (n.parents[1]->needs_grad) {
      detail::ConstMatMap<T> am(n.parents[0]->value.ptr(), m, k);
      detail::MatMap<T>(n.parents[1]->ensure_grad().ptr(), k, n_).noalias() += am.transpose() * gm;
    }
  });
}

/// A [m,k] times B^T for B [n,k]; pairwise similarity layout.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(1),
        "matmul_nt: incompatible shapes");
  int64_t m = a->value.dim(0), k = a->value.dim(1), n_ = b->value.dim(0);
  Tensor<T> out({m, n_});
  detail::ConstMatMap<T> am(a->value.ptr(), m, k), bm(b->value.ptr(), n_, k);
  detail::MatMap<T>(out.ptr(), m, n_).noalias() = am * bm.transpose();
  return detail::make_node<T>(std::move(out), {a, b}, [m, k, n_](Node<T>& n) {
    detail::ConstMatMap<T> gm(n.grad.ptr(), m, n_);
    if (n.parents[0]->needs_grad) {
      detail::ConstMatMap<T> bm(n.parents[1]->value.ptr(), n_, k);
      detail::MatMap<T>(n.parents[0]->ensure_grad().ptr(), m, k).noalias() += gm * bm;
    }
    if (n.parents[1]->needs_grad) {
      detail::ConstMatMap<T> am(n.parents[0]->value.ptr(), m, k);
      detail::MatMap<T>(n.parents[1]->ensure_grad().ptr(), n_, k).noalias() += gm.transpose() * am;
    }
  });
}

/// y = x W^T + bias for x [B,in], W [out,in], bias [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  check(x->value.ndim() == 2 && w->value.ndim() == 2 && x->value.dim(1) == w->value.dim(1),
        "linear: incompatible shapes");
  int64_t b = x->value.dim(0), in = x->value.dim(1), out_dim = w->value.dim(0);
  check(bias->value.numel() == out_dim, "linear: bias size mismatch");
  Tensor<T> out({b, out_dim});
  detail::ConstMatMap<T> xm(x->value.ptr(), b, in), wm(w->value.ptr(), out_dim, in);
  detail::MatMap<T> om(out.ptr(), b, out_dim);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value.ptr(), out_dim);
  return detail::make_node<T>(std::move(out), {x, w, bias}, [b, in, out_dim](Node<T>& n) {
    detail::ConstMatMap<T> gm(n.grad.ptr(), b, out_dim);
    if (n.parents[0]->needs_grad) {
      detail::ConstMatMap<T> wm(n.parents[1]->value.ptr(), out_dim, in);
      detail::MatMap<T>(n.parents[0]->ensure_grad().ptr(), b, in).noalias() += gm * wm;
    }
    if (n.parents[1]->needs_grad) {
      detail::ConstMatMap<T> xm(n.parents[0]->value.ptr(), b, in);
      detail::MatMap<T>(n.parents[1]->ensure_grad().ptr(), out_dim, in).noalias() +=
          gm.transpose() * xm;
    }
    if (n.parents[2]->needs_grad) {
      auto& g = n.parents[2]->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.ptr(), out_dim) += gm.colwise().sum();
    }
  });
}

/// Row-wise L2 normalization; zero rows map to zero rows with zero gradient.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a) {
  check(a->value.ndim() == 2, "l2_normalize_rows: expects [B,d]");
  int64_t b = a->value.dim(0), d = a->value.dim(1);
  Tensor<T> out({b, d});
  std::vector<T> norms(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    T s = 0;
    for (int64_t j = 0; j < d; ++j) s += a->value[i * d + j] * a->value[i * d + j];
    T nr = std::sqrt(s);
    norms[static_cast<size_t>(i)] = nr;
    if (nr > T(0))
      for (int64_t j = 0; j < d; ++j) out[i * d + j] = a->value[i * d + j] / nr;
  }
  return detail::make_node<T>(std::move(out), {a}, [b, d, norms](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < b; ++i) {
      T nr = norms[static_cast<size_t>(i)];
      if (nr <= T(0)) continue;
      T dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += n.grad[i * d + j] * n.value[i * d + j];
      for (int64_t j = 0; j < d; ++j)
        g[i * d + j] += (n.grad[i * d + j] - dot * n.value[i * d + j]) / nr;
    }
  });
}

/// Row-wise dot product: [B,d] x [B,d] -> [B].
template <typename T>
Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value) && a->value.ndim() == 2, "rowwise_dot: shape mismatch");
  int64_t rows = a->value.dim(0), d = a->value.dim(1);
  Tensor<T> out({rows});
  for (int64_t i = 0; i < rows; ++i) {
    T s = 0;
    for (int64_t j = 0; j < d; ++j) s += a->value[i * d + j] * b->value[i * d + j];
    out[i] = s;
  }
  return detail::make_node<T>(std::move(out), {a, b}, [rows, d](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    for (int64_t i = 0; i < rows; ++i) {
      if (n.parents[0]->needs_grad) {
        auto& g = n.parents[0]->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += n.grad[i] * bv[i * d + j];
      }
      if (n.parents[1]->needs_grad) {
        auto& g = n.parents[1]->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += n.grad[i] * av[i * d + j];
      }
    }
  });
}

/// Diagonal of a square matrix -> [B].
template <typename T>
Var<T> diagonal(const Var<T>& a) {
  check(a->value.ndim() == 2 && a->value.dim(0) == a->value.dim(1), "diagonal: expects square");
  int64_t b = a->value.dim(0);
  Tensor<T> out({b});
  for (int64_t i = 0; i < b; ++i) out[i] = a->value[i * b + i];
  return detail::make_node<T>(std::move(out), {a}, [b](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < b; ++i) g[i * b + i] += n.grad[i];
  });
}

/// Per row i: log sum_{j != i} exp(a_ij). Stable via row max.
template <typename T>
Var<T> logsumexp_offdiag_rows(const Var<T>& a) {
  check(a->value.ndim() == 2 && a->value.dim(0) == a->value.dim(1) && a->value.dim(0) >= 2,
        "logsumexp_offdiag_rows: expects square matrix with B >= 2");
  int64_t b = a->value.dim(0);
  Tensor<T> out({b});
  for (int64_t i = 0; i < b; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < b; ++j)
      if (j != i) mx = std::max(mx, a->value[i * b + j]);
    T s = 0;
    for (int64_t j = 0; j < b; ++j)
      if (j != i) s += std::exp(a->value[i * b + j] - mx);
    out[i] = mx + std::log(s);
  }
  return detail::make_node<T>(std::move(out), {a}, [b](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& av = n.parents[0]->value;
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < b; ++j)
        if (j != i) g[i * b + j] += n.grad[i] * std::exp(av[i * b + j] - n.value[i]);
  });
}

/// Mean softmax cross-entropy for logits [B,K] against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  check(logits->value.ndim() == 2, "softmax_cross_entropy: expects [B,K]");
  int64_t b = logits->value.dim(0), k = logits->value.dim(1);
  check(static_cast<int64_t>(labels.size()) == b, "softmax_cross_entropy: label count mismatch");
  Tensor<T> probs({b, k});
  T loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    T mx = logits->value[i * k];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, logits->value[i * k + j]);
    T s = 0;
    for (int64_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(logits->value[i * k + j] - mx);
      s += probs[i * k + j];
    }
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    loss -= std::log(std::max(probs[i * k + labels[static_cast<size_t>(i)]],
                              std::numeric_limits<T>::min()));
  }
  loss /= static_cast<T>(b);
  return detail::make_node<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {logits},
      [b, k, probs, labels](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        T s = n.grad[0] / static_cast<T>(b);
        for (int64_t i = 0; i < b; ++i)
          for (int64_t j = 0; j < k; ++j)
            g[i * k + j] +=
                s * (probs[i * k + j] - (labels[static_cast<size_t>(i)] == j ? T(1) : T(0)));
      });
}

/// Mean binary cross-entropy on logits against {0,1} targets (stable form).
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets) {
  check(logits->value.same_shape(targets), "bce_with_logits: shape mismatch");
  int64_t m = logits->value.numel();
  T loss = 0;
  for (int64_t i = 0; i < m; ++i) {
    T x = logits->value[i], t = targets[i];
    // max(x,0) - x*t + log(1+exp(-|x|))
    loss += std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<T>(m);
  return detail::make_node<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {logits}, [m, targets](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        const auto& x = n.parents[0]->value;
        T s = n.grad[0] / static_cast<T>(m);
        for (int64_t i = 0; i < m; ++i) {
          T sig = T(1) / (T(1) + std::exp(-x[i]));
          g[i] += s * (sig - targets[i]);
        }
      });
}

/// Mean squared error over all elements against a variable target.
template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  check(pred->value.same_shape(target->value), "mse: shape mismatch");
  int64_t m = pred->value.numel();
  T loss = 0;
  for (int64_t i = 0; i < m; ++i) {
    T d = pred->value[i] - target->value[i];
    loss += d * d;
  }
  loss /= static_cast<T>(m);
  return detail::make_node<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {pred, target}, [m](Node<T>& n) {
        const auto& pv = n.parents[0]->value;
        const auto& tv = n.parents[1]->value;
        T s = T(2) * n.grad[0] / static_cast<T>(m);
        if (n.parents[0]->needs_grad) {
          auto& g = n.parents[0]->ensure_grad();
          for (int64_t i = 0; i < m; ++i) g[i] += s * (pv[i] - tv[i]);
        }
        if (n.parents[1]->needs_grad) {
          auto& g = n.parents[1]->ensure_grad();
          for (int64_t i = 0; i < m; ++i) g[i] -= s * (pv[i] - tv[i]);
        }
      });
}

/// Row-wise squared distance summed over the feature dim: [B,d]x[B,d] -> [B].
template <typename T>
Var<T> squared_dist_rows(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value) && a->value.ndim() == 2, "squared_dist_rows: shape mismatch");
  int64_t rows = a->value.dim(0), d = a->value.dim(1);
  Tensor<T> out({rows});
  for (int64_t i = 0; i < rows; ++i) {
    T s = 0;
    for (int64_t j = 0; j < d; ++j) {
      T diff = a->value[i * d + j] - b->value[i * d + j];
      s += diff * diff;
    }
    out[i] = s;
  }
  return detail::make_node<T>(std::move(out), {a, b}, [rows, d](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    for (int64_t i = 0; i < rows; ++i) {
      T gi = T(2) * n.grad[i];
      if (n.parents[0]->needs_grad) {
        auto& g = n.parents[0]->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += gi * (av[i * d + j] - bv[i * d + j]);
      }
      if (n.parents[1]->needs_grad) {
        auto& g = n.parents[1]->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g[i * d + j] -= gi * (av[i * d + j] - bv[i * d + j]);
      }
    }
  });
}

}  // namespace adios::ag
