#pragma once

#include <limits>

#include "adios/autodiff.hpp"

namespace adios::ag {

namespace detail {

// im2col: gather data [B,C,Hd,Wd] into col [C*k*k, B*Hg*Wg] for a sliding
// window grid of Hg x Wg positions with the given stride and padding.
// The same geometry, run in reverse (scatter-add), is col2im.
template <typename T>
void gather_cols(const Tensor<T>& data, int64_t c_dim, int64_t hd, int64_t wd, int64_t hg,
                 int64_t wg, int k, int stride, int pad, Tensor<T>& col) {
  int64_t b_dim = data.dim(0);
  int64_t p = hg * wg;
  int64_t cols = b_dim * p;
  const T* src = data.ptr();
  T* dst = col.ptr();
  for (int64_t c = 0; c < c_dim; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        int64_t row = (c * k + ky) * k + kx;
        T* out_row = dst + row * cols;
        for (int64_t b = 0; b < b_dim; ++b) {
          const T* plane = src + (b * c_dim + c) * hd * wd;
          T* out_b = out_row + b * p;
          for (int64_t gy = 0; gy < hg; ++gy) {
            int64_t y = gy * stride + ky - pad;
            T* out_g = out_b + gy * wg;
            if (y < 0 || y >= hd) {
              for (int64_t gx = 0; gx < wg; ++gx) out_g[gx] = T(0);
              continue;
            }
            const T* in_y = plane + y * wd;
            for (int64_t gx = 0; gx < wg; ++gx) {
              int64_t x = gx * stride + kx - pad;
              out_g[gx] = (x >= 0 && x < wd) ? in_y[x] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void scatter_cols(const Tensor<T>& col, int64_t c_dim, int64_t hd, int64_t wd, int64_t hg,
                  int64_t wg, int k, int stride, int pad, Tensor<T>& data) {
  int64_t b_dim = data.dim(0);
  int64_t p = hg * wg;
  int64_t cols = b_dim * p;
  const T* src = col.ptr();
  T* dst = data.ptr();
  for (int64_t c = 0; c < c_dim; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        int64_t row = (c * k + ky) * k + kx;
        const T* in_row = src + row * cols;
        for (int64_t b = 0; b < b_dim; ++b) {
          T* plane = dst + (b * c_dim + c) * hd * wd;
          const T* in_b = in_row + b * p;
          for (int64_t gy = 0; gy < hg; ++gy) {
            int64_t y = gy * stride + ky - pad;
            if (y < 0 || y >= hd) continue;
            T* out_y = plane + y * wd;
            const T* in_g = in_b + gy * wg;
            for (int64_t gx = 0; gx < wg; ++gx) {
              int64_t x = gx * stride + kx - pad;
              if (x >= 0 && x < wd) out_y[x] += in_g[gx];
            }
          }
        }
      }
    }
  }
}

inline int64_t conv_out_size(int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

/// 2-D convolution: x [B,Cin,H,W], w [Cout,Cin,k,k], bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  check(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[1],
        "conv2d: incompatible shapes " + shape_str(xs) + " / " + shape_str(ws));
  int64_t b = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  int64_t cout = ws[0];
  int k = static_cast<int>(ws[2]);
  check(bias->value.numel() == cout, "conv2d: bias size mismatch");
  int64_t ho = detail::conv_out_size(h, k, stride, pad);
  int64_t wo = detail::conv_out_size(wd, k, stride, pad);
  check(ho >= 1 && wo >= 1, "conv2d: output would be empty");
  int64_t kk = cin * k * k, p = ho * wo;

  Tensor<T> col({kk, b * p});
  detail::gather_cols(x->value, cin, h, wd, ho, wo, k, stride, pad, col);
  Tensor<T> out({b, cout, ho, wo});
  detail::ConstMatMap<T> wm(w->value.ptr(), cout, kk);
  detail::ConstMatMap<T> cm(col.ptr(), kk, b * p);
  detail::RowMat<T> om = wm * cm;  // [cout, b*p]
  for (int64_t bi = 0; bi < b; ++bi)
    detail::MatMap<T>(out.ptr() + bi * cout * p, cout, p) = om.middleCols(bi * p, p);
  T* optr = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t c = 0; c < cout; ++c) {
      T bv = bias->value[c];
      T* row = optr + (bi * cout + c) * p;
      for (int64_t i = 0; i < p; ++i) row[i] += bv;
    }

  auto bp = [b, cin, cout, h, wd, ho, wo, k, stride, pad, kk, p](Node<T>& n) {
    // regather the input columns instead of keeping them alive
    Tensor<T> gcol({cout, b * p});
    for (int64_t bi = 0; bi < b; ++bi)
      detail::MatMap<T>(gcol.ptr(), cout, b * p).middleCols(bi * p, p) =
          detail::ConstMatMap<T>(n.grad.ptr() + bi * cout * p, cout, p);
    detail::ConstMatMap<T> gm(gcol.ptr(), cout, b * p);
    if (n.parents[1]->needs_grad) {
      Tensor<T> col({kk, b * p});
      detail::gather_cols(n.parents[0]->value, cin, h, wd, ho, wo, k, stride, pad, col);
      detail::ConstMatMap<T> cm(col.ptr(), kk, b * p);
      detail::MatMap<T>(n.parents[1]->ensure_grad().ptr(), cout, kk).noalias() +=
          gm * cm.transpose();
    }
    if (n.parents[2]->needs_grad) {
      auto& gb = n.parents[2]->ensure_grad();
      for (int64_t c = 0; c < cout; ++c) gb[c] += gm.row(c).sum();
    }
    if (n.parents[0]->needs_grad) {
      detail::ConstMatMap<T> wm(n.parents[1]->value.ptr(), cout, kk);
      Tensor<T> colgrad({kk, b * p});
      detail::MatMap<T>(colgrad.ptr(), kk, b * p).noalias() = wm.transpose() * gm;
      detail::scatter_cols(colgrad, cin, h, wd, ho, wo, k, stride, pad,
                           n.parents[0]->ensure_grad());
    }
  };
  return detail::make_node<T>(std::move(out), {x, w, bias}, std::move(bp));
}

/// Transposed 2-D convolution: x [B,Cin,H,W], w [Cin,Cout,k,k], bias [Cout].
/// out_h/out_w select the output size among the stride-compatible choices.
template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad,
                        int64_t out_h, int64_t out_w) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  check(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[0],
        "conv2d_transpose: incompatible shapes");
  int64_t b = xs[0], cin = xs[1], hi = xs[2], wi = xs[3];
  int64_t cout = ws[1];
  int k = static_cast<int>(ws[2]);
  check(bias->value.numel() == cout, "conv2d_transpose: bias size mismatch");
  check(detail::conv_out_size(out_h, k, stride, pad) == hi &&
            detail::conv_out_size(out_w, k, stride, pad) == wi,
        "conv2d_transpose: output size incompatible with input grid");
  int64_t kk = cout * k * k, p = hi * wi;

  // x in channel-major layout [cin, b*p]
  Tensor<T> xmat({cin, b * p});
  for (int64_t bi = 0; bi < b; ++bi)
    detail::MatMap<T>(xmat.ptr(), cin, b * p).middleCols(bi * p, p) =
        detail::ConstMatMap<T>(x->value.ptr() + bi * cin * p, cin, p);
  detail::ConstMatMap<T> wm(w->value.ptr(), cin, kk);
  Tensor<T> colv({kk, b * p});
  detail::MatMap<T>(colv.ptr(), kk, b * p).noalias() =
      wm.transpose() * detail::ConstMatMap<T>(xmat.ptr(), cin, b * p);
  Tensor<T> out({b, cout, out_h, out_w});
  detail::scatter_cols(colv, cout, out_h, out_w, hi, wi, k, stride, pad, out);
  T* optr = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t c = 0; c < cout; ++c) {
      T bv = bias->value[c];
      T* row = optr + (bi * cout + c) * out_h * out_w;
      for (int64_t i = 0; i < out_h * out_w; ++i) row[i] += bv;
    }

  auto bp = [b, cin, cout, hi, wi, out_h, out_w, k, stride, pad, kk, p](Node<T>& n) {
    Tensor<T> gcol({kk, b * p});
    detail::gather_cols(n.grad, cout, out_h, out_w, hi, wi, k, stride, pad, gcol);
    detail::ConstMatMap<T> gm(gcol.ptr(), kk, b * p);
    if (n.parents[1]->needs_grad) {
      Tensor<T> xmat({cin, b * p});
      for (int64_t bi = 0; bi < b; ++bi)
        detail::MatMap<T>(xmat.ptr(), cin, b * p).middleCols(bi * p, p) =
            detail::ConstMatMap<T>(n.parents[0]->value.ptr() + bi * cin * p, cin, p);
      detail::MatMap<T>(n.parents[1]->ensure_grad().ptr(), cin, kk).noalias() +=
          detail::ConstMatMap<T>(xmat.ptr(), cin, b * p) * gm.transpose();
    }
    if (n.parents[2]->needs_grad) {
      auto& gb = n.parents[2]->ensure_grad();
      const T* gptr = n.grad.ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t c = 0; c < cout; ++c) {
          const T* row = gptr + (bi * cout + c) * out_h * out_w;
          T s = 0;
          for (int64_t i = 0; i < out_h * out_w; ++i) s += row[i];
          gb[c] += s;
        }
    }
    if (n.parents[0]->needs_grad) {
      detail::ConstMatMap<T> wm(n.parents[1]->value.ptr(), cin, kk);
      detail::RowMat<T> dxmat = wm * gm;  // [cin, b*p]
      auto& gx = n.parents[0]->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi)
        detail::MatMap<T>(gx.ptr() + bi * cin * p, cin, p) += dxmat.middleCols(bi * p, p);
    }
  };
  return detail::make_node<T>(std::move(out), {x, w, bias}, std::move(bp));
}

/// 2x2 max pooling, stride 2. Requires even spatial dims.
template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  const auto& s = x->value.shape;
  check(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "maxpool2x2: needs even spatial dims");
  int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  int64_t ho = h / 2, wo = w / 2;
  Tensor<T> out({b, c, ho, wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  const T* xp = x->value.ptr();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* plane = xp + bc * h * w;
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t z = 0; z < wo; ++z) {
        int64_t base = (2 * y) * w + 2 * z;
        int64_t cand[4] = {base, base + 1, base + w, base + w + 1};
        int64_t best = cand[0];
        T bv = plane[best];
        for (int j = 1; j < 4; ++j)
          if (plane[cand[j]] > bv) {
            bv = plane[cand[j]];
            best = cand[j];
          }
        int64_t oi = bc * ho * wo + y * wo + z;
        out[oi] = bv;
        argmax[static_cast<size_t>(oi)] = bc * h * w + best;
      }
  }
  return detail::make_node<T>(std::move(out), {x}, [argmax](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[argmax[static_cast<size_t>(i)]] += n.grad[i];
  });
}

/// Global average pool: [B,C,H,W] -> [B,C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x->value.shape;
  check(s.size() == 4, "global_avg_pool: expects 4-d input");
  int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out({b, c});
  for (int64_t i = 0; i < b * c; ++i) {
    T acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += x->value[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return detail::make_node<T>(std::move(out), {x}, [hw](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      T gi = n.grad[i] / static_cast<T>(hw);
      for (int64_t j = 0; j < hw; ++j) g[i * hw + j] += gi;
    }
  });
}

/// Bilinear 2x upsampling (half-pixel centers, clamped edges).
template <typename T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
  const auto& s = x->value.shape;
  check(s.size() == 4, "upsample_bilinear2x: expects 4-d input");
  int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  int64_t ho = 2 * h, wo = 2 * w;
  auto make_axis = [](int64_t in, int64_t out) {
    std::vector<std::tuple<int64_t, int64_t, T>> m(static_cast<size_t>(out));
    for (int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
      int64_t i0 = static_cast<int64_t>(std::floor(src));
      int64_t i1 = std::min(i0 + 1, in - 1);
      m[static_cast<size_t>(o)] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return m;
  };
  auto ym = make_axis(h, ho), xm = make_axis(w, wo);
  Tensor<T> out({b, c, ho, wo});
  const T* xp = x->value.ptr();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* plane = xp + bc * h * w;
    T* oplane = out.ptr() + bc * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      auto [y0, y1, fy] = ym[static_cast<size_t>(y)];
      for (int64_t z = 0; z < wo; ++z) {
        auto [x0, x1, fx] = xm[static_cast<size_t>(z)];
        T top = plane[y0 * w + x0] * (T(1) - fx) + plane[y0 * w + x1] * fx;
        T bot = plane[y1 * w + x0] * (T(1) - fx) + plane[y1 * w + x1] * fx;
        oplane[y * wo + z] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return detail::make_node<T>(std::move(out), {x}, [b, c, h, w, ho, wo, ym, xm](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t bc = 0; bc < b * c; ++bc) {
      T* gplane = g.ptr() + bc * h * w;
      const T* goplane = n.grad.ptr() + bc * ho * wo;
      for (int64_t y = 0; y < ho; ++y) {
        auto [y0, y1, fy] = ym[static_cast<size_t>(y)];
        for (int64_t z = 0; z < wo; ++z) {
          auto [x0, x1, fx] = xm[static_cast<size_t>(z)];
          T gv = goplane[y * wo + z];
          gplane[y0 * w + x0] += gv * (T(1) - fy) * (T(1) - fx);
          gplane[y0 * w + x1] += gv * (T(1) - fy) * fx;
          gplane[y1 * w + x0] += gv * fy * (T(1) - fx);
          gplane[y1 * w + x1] += gv * fy * fx;
        }
      }
    }
  });
}

/// Concatenate along the channel dim.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& as = a->value.shape;
  const auto& bs = b->value.shape;
  check(as.size() == 4 && bs.size() == 4 && as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3],
        "concat_channels: incompatible shapes");
  int64_t bn = as[0], c1 = as[1], c2 = bs[1], hw = as[2] * as[3];
  Tensor<T> out({bn, c1 + c2, as[2], as[3]});
  for (int64_t i = 0; i < bn; ++i) {
    std::copy_n(a->value.ptr() + i * c1 * hw, c1 * hw, out.ptr() + i * (c1 + c2) * hw);
    std::copy_n(b->value.ptr() + i * c2 * hw, c2 * hw, out.ptr() + i * (c1 + c2) * hw + c1 * hw);
  }
  return detail::make_node<T>(std::move(out), {a, b}, [bn, c1, c2, hw](Node<T>& n) {
    for (int64_t i = 0; i < bn; ++i) {
      if (n.parents[0]->needs_grad) {
        auto& g = n.parents[0]->ensure_grad();
        const T* src = n.grad.ptr() + i * (c1 + c2) * hw;
        T* dst = g.ptr() + i * c1 * hw;
        for (int64_t j = 0; j < c1 * hw; ++j) dst[j] += src[j];
      }
      if (n.parents[1]->needs_grad) {
        auto& g = n.parents[1]->ensure_grad();
        const T* src = n.grad.ptr() + i * (c1 + c2) * hw + c1 * hw;
        T* dst = g.ptr() + i * c2 * hw;
        for (int64_t j = 0; j < c2 * hw; ++j) dst[j] += src[j];
      }
    }
  });
}

/// Pixelwise softmax across mask slots: [B,N,H,W], softmax over dim 1.
template <typename T>
Var<T> softmax_slots(const Var<T>& x) {
  const auto& s = x->value.shape;
  check(s.size() == 4, "softmax_slots: expects [B,N,H,W]");
  int64_t b = s[0], nslots = s[1], hw = s[2] * s[3];
  Tensor<T> out({b, nslots, s[2], s[3]});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < hw; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t n_ = 0; n_ < nslots; ++n_)
        mx = std::max(mx, x->value[(bi * nslots + n_) * hw + i]);
      T acc = 0;
      for (int64_t n_ = 0; n_ < nslots; ++n_) {
        T e = std::exp(x->value[(bi * nslots + n_) * hw + i] - mx);
        out[(bi * nslots + n_) * hw + i] = e;
        acc += e;
      }
      for (int64_t n_ = 0; n_ < nslots; ++n_) out[(bi * nslots + n_) * hw + i] /= acc;
    }
  return detail::make_node<T>(std::move(out), {x}, [b, nslots, hw](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t i = 0; i < hw; ++i) {
        T dot = 0;
        for (int64_t n_ = 0; n_ < nslots; ++n_) {
          int64_t idx = (bi * nslots + n_) * hw + i;
          dot += n.grad[idx] * n.value[idx];
        }
        for (int64_t n_ = 0; n_ < nslots; ++n_) {
          int64_t idx = (bi * nslots + n_) * hw + i;
          g[idx] += n.value[idx] * (n.grad[idx] - dot);
        }
      }
  });
}

/// Select mask slot n: [B,N,H,W] -> [B,1,H,W].
template <typename T>
Var<T> slice_slot(const Var<T>& x, int64_t slot) {
  const auto& s = x->value.shape;
  check(s.size() == 4 && slot >= 0 && slot < s[1], "slice_slot: slot out of range");
  int64_t b = s[0], nslots = s[1], hw = s[2] * s[3];
  Tensor<T> out({b, 1, s[2], s[3]});
  for (int64_t bi = 0; bi < b; ++bi)
    std::copy_n(x->value.ptr() + (bi * nslots + slot) * hw, hw, out.ptr() + bi * hw);
  return detail::make_node<T>(std::move(out), {x}, [b, nslots, hw, slot](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int64_t bi = 0; bi < b; ++bi) {
      T* dst = g.ptr() + (bi * nslots + slot) * hw;
      const T* src = n.grad.ptr() + bi * hw;
      for (int64_t j = 0; j < hw; ++j) dst[j] += src[j];
    }
  });
}

/// Hadamard occlusion: images [B,C,H,W] * mask [B,1,H,W] broadcast over C.
template <typename T>
Var<T> apply_mask(const Var<T>& images, const Var<T>& mask) {
  const auto& is = images->value.shape;
  const auto& ms = mask->value.shape;
  check(is.size() == 4 && ms.size() == 4 && ms[1] == 1 && is[0] == ms[0] && is[2] == ms[2] &&
            is[3] == ms[3],
        "apply_mask: images " + shape_str(is) + " vs mask " + shape_str(ms));
  int64_t b = is[0], c = is[1], hw = is[2] * is[3];
  Tensor<T> out({b, c, is[2], is[3]});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t j = 0; j < hw; ++j)
        out[(bi * c + ci) * hw + j] = images->value[(bi * c + ci) * hw + j] *
                                      mask->value[bi * hw + j];
  return detail::make_node<T>(std::move(out), {images, mask}, [b, c, hw](Node<T>& n) {
    const auto& iv = n.parents[0]->value;
    const auto& mv = n.parents[1]->value;
    if (n.parents[0]->needs_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t j = 0; j < hw; ++j)
            g[(bi * c + ci) * hw + j] += n.grad[(bi * c + ci) * hw + j] * mv[bi * hw + j];
    }
    if (n.parents[1]->needs_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < hw; ++j) {
          T acc = 0;
          for (int64_t ci = 0; ci < c; ++ci)
            acc += n.grad[(bi * c + ci) * hw + j] * iv[(bi * c + ci) * hw + j];
          g[bi * hw + j] += acc;
        }
    }
  });
}

/// GroupNorm over [B,C,H,W] with per-channel affine parameters.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  double eps = 1e-5) {
  const auto& s = x->value.shape;
  check(s.size() == 4, "group_norm: expects 4-d input");
  int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  check(c % groups == 0, "group_norm: channels not divisible by groups");
  check(gamma->value.numel() == c && beta->value.numel() == c, "group_norm: affine size mismatch");
  int64_t cpg = c / groups;
  int64_t m = cpg * hw;  // elements per (batch, group)
  Tensor<T> out({b, c, s[2], s[3]});
  std::vector<T> means(static_cast<size_t>(b * groups)), istds(static_cast<size_t>(b * groups));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t g = 0; g < groups; ++g) {
      const T* base = x->value.ptr() + (bi * c + g * cpg) * hw;
      T mean_v = 0;
      for (int64_t j = 0; j < m; ++j) mean_v += base[j];
      mean_v /= static_cast<T>(m);
      T var_v = 0;
      for (int64_t j = 0; j < m; ++j) {
        T d = base[j] - mean_v;
        var_v += d * d;
      }
      var_v /= static_cast<T>(m);
      T istd = T(1) / std::sqrt(var_v + static_cast<T>(eps));
      means[static_cast<size_t>(bi * groups + g)] = mean_v;
      istds[static_cast<size_t>(bi * groups + g)] = istd;
      for (int64_t cc = 0; cc < cpg; ++cc) {
        int64_t ch = g * cpg + cc;
        const T* xin = x->value.ptr() + (bi * c + ch) * hw;
        T* xout = out.ptr() + (bi * c + ch) * hw;
        T ga = gamma->value[ch], be = beta->value[ch];
        for (int64_t j = 0; j < hw; ++j) xout[j] = (xin[j] - mean_v) * istd * ga + be;
      }
    }
  auto bp = [b, c, hw, groups, cpg, m, means, istds](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& gav = n.parents[1]->value;
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t g = 0; g < groups; ++g) {
        T mean_v = means[static_cast<size_t>(bi * groups + g)];
        T istd = istds[static_cast<size_t>(bi * groups + g)];
        // accumulate sums of dxhat and dxhat*xhat over the group
        T sum_dxh = 0, sum_dxh_xh = 0;
        for (int64_t cc = 0; cc < cpg; ++cc) {
          int64_t ch = g * cpg + cc;
          const T* xin = xv.ptr() + (bi * c + ch) * hw;
          const T* go = n.grad.ptr() + (bi * c + ch) * hw;
          T ga = gav[ch];
          for (int64_t j = 0; j < hw; ++j) {
            T xh = (xin[j] - mean_v) * istd;
            T dxh = go[j] * ga;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
        }
        if (n.parents[0]->needs_grad) {
          auto& gx = n.parents[0]->ensure_grad();
          for (int64_t cc = 0; cc < cpg; ++cc) {
            int64_t ch = g * cpg + cc;
            const T* xin = xv.ptr() + (bi * c + ch) * hw;
            const T* go = n.grad.ptr() + (bi * c + ch) * hw;
            T* gxp = gx.ptr() + (bi * c + ch) * hw;
            T ga = gav[ch];
            for (int64_t j = 0; j < hw; ++j) {
              T xh = (xin[j] - mean_v) * istd;
              T dxh = go[j] * ga;
              gxp[j] += istd * (dxh - (sum_dxh + xh * sum_dxh_xh) / static_cast<T>(m));
            }
          }
        }
        if (n.parents[1]->needs_grad || n.parents[2]->needs_grad) {
          for (int64_t cc = 0; cc < cpg; ++cc) {
            int64_t ch = g * cpg + cc;
            const T* xin = xv.ptr() + (bi * c + ch) * hw;
            const T* go = n.grad.ptr() + (bi * c + ch) * hw;
            T dga = 0, dbe = 0;
            for (int64_t j = 0; j < hw; ++j) {
              dga += go[j] * (xin[j] - mean_v) * istd;
              dbe += go[j];
            }
            if (n.parents[1]->needs_grad) n.parents[1]->ensure_grad()[ch] += dga;
            if (n.parents[2]->needs_grad) n.parents[2]->ensure_grad()[ch] += dbe;
          }
        }
      }
  };
  return detail::make_node<T>(std::move(out), {x, gamma, beta}, std::move(bp));
}

}  // namespace adios::ag
