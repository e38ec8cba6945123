#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "structfill/tensor.hpp"

namespace sfill {

struct ConvSpec {
  int out_channels = 0;
  int kh = 0, kw = 0;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

inline int conv_out_extent(int in, int k, int stride, int dilation, int padding) {
  return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + a.shape().str() +
                      " vs " + b.shape().str());
}

// col is (c*kh*kw) x (oh*ow), row-major
template <class T>
inline void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride,
                   int dil, int pad, int oh, int ow, T* col) {
  for (int ic = 0; ic < c; ++ic) {
    const T* src = x + static_cast<int64_t>(ic) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (static_cast<int64_t>(ic) * kh * kw + ki * kw + kj) *
                           (static_cast<int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki * dil;
          T* drow = dst + static_cast<int64_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj * dil;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

// adjoint of im2col: scatter-add columns back into the image
template <class T>
inline void col2im_acc(const T* col, int c, int h, int w, int kh, int kw,
                       int stride, int dil, int pad, int oh, int ow, T* x) {
  for (int ic = 0; ic < c; ++ic) {
    T* dst = x + static_cast<int64_t>(ic) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (static_cast<int64_t>(ic) * kh * kw + ki * kw + kj) *
                                 (static_cast<int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki * dil;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<int64_t>(oy) * ow;
          T* drow = dst + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj * dil;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation with zero padding; kernels stored (out_c, in_c, kh, kw).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const ConvSpec& spec) {
  const Shape xs = x.shape(), ws = w.shape();
  if (ws.c != xs.c)
    throw TensorError("conv2d: input channels " + std::to_string(xs.c) +
                      " != kernel in_c " + std::to_string(ws.c));
  if (ws.n != spec.out_channels || ws.h != spec.kh || ws.w != spec.kw)
    throw TensorError("conv2d: kernel shape " + ws.str() + " does not match spec (" +
                      std::to_string(spec.out_channels) + " kernels of " +
                      std::to_string(spec.kh) + "x" + std::to_string(spec.kw) + ")");
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0)
    throw TensorError("conv2d: invalid spec (stride " + std::to_string(spec.stride) +
                      ", dilation " + std::to_string(spec.dilation) + ", padding " +
                      std::to_string(spec.padding) + ")");
  if (b.numel() != ws.n)
    throw TensorError("conv2d: bias has " + std::to_string(b.numel()) +
                      " values for " + std::to_string(ws.n) + " output channels");
  const int oh = conv_out_extent(xs.h, spec.kh, spec.stride, spec.dilation, spec.padding);
  const int ow = conv_out_extent(xs.w, spec.kw, spec.stride, spec.dilation, spec.padding);
  if (oh < 1 || ow < 1)
    throw TensorError("conv2d: non-positive output size " + std::to_string(oh) + "x" +
                      std::to_string(ow) + " from input " + xs.str());

  const int ckk = xs.c * spec.kh * spec.kw;
  const int64_t L = static_cast<int64_t>(oh) * ow;
  Tensor<T> out(Shape(xs.n, ws.n, oh, ow));

  {
    std::vector<T> col(static_cast<size_t>(ckk) * L);
    Eigen::Map<const detail::MatRM<T>> W(w.data(), ws.n, ckk);
    for (int in = 0; in < xs.n; ++in) {
      detail::im2col(x.data() + x.index(in, 0, 0, 0), xs.c, xs.h, xs.w, spec.kh,
                     spec.kw, spec.stride, spec.dilation, spec.padding, oh, ow,
                     col.data());
      Eigen::Map<const detail::MatRM<T>> C(col.data(), ckk, L);
      Eigen::Map<detail::MatRM<T>> Y(out.data() + out.index(in, 0, 0, 0), ws.n, L);
      Y.noalias() = W * C;
    }
    const T* bp = b.data();
    for (int in = 0; in < xs.n; ++in)
      for (int oc = 0; oc < ws.n; ++oc) {
        T* row = out.data() + out.index(in, oc, 0, 0);
        const T bv = bp[oc];
        for (int64_t i = 0; i < L; ++i) row[i] += bv;
      }
  }

  const bool any = on_grad_path(x) || on_grad_path(w) || on_grad_path(b);
  mark_output(out, any);
  if (out.requires_grad()) {
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    ConvSpec sp = spec;
    const bool need_dx = on_grad_path(x), need_dw = on_grad_path(w), need_db = on_grad_path(b);
    record_node<T>([=]() mutable {
      const Shape xs2 = xc.shape(), ws2 = wc.shape();
      const int oh2 = oc.shape().h, ow2 = oc.shape().w;
      const int ckk2 = xs2.c * sp.kh * sp.kw;
      const int64_t L2 = static_cast<int64_t>(oh2) * ow2;
      const T* dY = oc.grad();
      if (need_db) {
        T* db = bc.grad();
        for (int in = 0; in < xs2.n; ++in)
          for (int c = 0; c < ws2.n; ++c) {
            const T* row = dY + oc.index(in, c, 0, 0);
            T acc = T(0);
            for (int64_t i = 0; i < L2; ++i) acc += row[i];
            db[c] += acc;
          }
      }
      std::vector<T> col(static_cast<size_t>(ckk2) * L2);
      std::vector<T> dcol(need_dx ? static_cast<size_t>(ckk2) * L2 : 0);
      Eigen::Map<const detail::MatRM<T>> W(wc.data(), ws2.n, ckk2);
      for (int in = 0; in < xs2.n; ++in) {
        Eigen::Map<const detail::MatRM<T>> G(dY + oc.index(in, 0, 0, 0), ws2.n, L2);
        if (need_dw) {
          detail::im2col(xc.data() + xc.index(in, 0, 0, 0), xs2.c, xs2.h, xs2.w,
                         sp.kh, sp.kw, sp.stride, sp.dilation, sp.padding, oh2, ow2,
                         col.data());
          Eigen::Map<const detail::MatRM<T>> C(col.data(), ckk2, L2);
          Eigen::Map<detail::MatRM<T>> dW(wc.grad(), ws2.n, ckk2);
          dW.noalias() += G * C.transpose();
        }
        if (need_dx) {
          Eigen::Map<detail::MatRM<T>> dC(dcol.data(), ckk2, L2);
          dC.noalias() = W.transpose() * G;
          detail::col2im_acc(dcol.data(), xs2.c, xs2.h, xs2.w, sp.kh, sp.kw,
                             sp.stride, sp.dilation, sp.padding, oh2, ow2,
                             xc.grad() + xc.index(in, 0, 0, 0));
        }
      }
    });
  }
  return out;
}

// Stride-1 transposed convolution: output = sum over positions of the kernel
// stamped and weighted by the input value there. Filters (m, c, kh, kw).
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, int padding) {
  const Shape xs = x.shape(), ws = w.shape();
  if (xs.c != ws.n)
    throw TensorError("conv_transpose2d: input channels " + std::to_string(xs.c) +
                      " != filter count " + std::to_string(ws.n));
  const int oh = xs.h + ws.h - 1 - 2 * padding;
  const int ow = xs.w + ws.w - 1 - 2 * padding;
  if (oh < 1 || ow < 1)
    throw TensorError("conv_transpose2d: non-positive output " + std::to_string(oh) +
                      "x" + std::to_string(ow));

  const int ckk = ws.c * ws.h * ws.w;
  const int64_t L = static_cast<int64_t>(xs.h) * xs.w;
  Tensor<T> out(Shape(xs.n, ws.c, oh, ow));
  {
    std::vector<T> col(static_cast<size_t>(ckk) * L);
    Eigen::Map<const detail::MatRM<T>> W(w.data(), ws.n, ckk);
    for (int in = 0; in < xs.n; ++in) {
      Eigen::Map<const detail::MatRM<T>> X(x.data() + x.index(in, 0, 0, 0), ws.n, L);
      Eigen::Map<detail::MatRM<T>> C(col.data(), ckk, L);
      C.noalias() = W.transpose() * X;
      detail::col2im_acc(col.data(), ws.c, oh, ow, ws.h, ws.w, 1, 1, padding,
                         xs.h, xs.w, out.data() + out.index(in, 0, 0, 0));
    }
  }

  const bool any = on_grad_path(x) || on_grad_path(w);
  mark_output(out, any);
  if (out.requires_grad()) {
    Tensor<T> xc = x, wc = w, oc = out;
    const int pad = padding;
    const bool need_dx = on_grad_path(x), need_dw = on_grad_path(w);
    record_node<T>([=]() mutable {
      const Shape xs2 = xc.shape(), ws2 = wc.shape(), os2 = oc.shape();
      const int ckk2 = ws2.c * ws2.h * ws2.w;
      const int64_t L2 = static_cast<int64_t>(xs2.h) * xs2.w;
      std::vector<T> dcol(static_cast<size_t>(ckk2) * L2);
      Eigen::Map<const detail::MatRM<T>> W(wc.data(), ws2.n, ckk2);
      for (int in = 0; in < xs2.n; ++in) {
        detail::im2col(oc.grad() + oc.index(in, 0, 0, 0), ws2.c, os2.h, os2.w,
                       ws2.h, ws2.w, 1, 1, pad, xs2.h, xs2.w, dcol.data());
        Eigen::Map<const detail::MatRM<T>> dC(dcol.data(), ckk2, L2);
        if (need_dx) {
          Eigen::Map<detail::MatRM<T>> dX(xc.grad() + xc.index(in, 0, 0, 0), ws2.n, L2);
          dX.noalias() += W * dC;
        }
        if (need_dw) {
          Eigen::Map<const detail::MatRM<T>> X(xc.data() + xc.index(in, 0, 0, 0), ws2.n, L2);
          Eigen::Map<detail::MatRM<T>> dW(wc.grad(), ws2.n, ckk2);
          dW.noalias() += X * dC.transpose();
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (factor < 1) throw TensorError("upsample_nearest: factor must be >= 1");
  const Shape s = x.shape();
  Tensor<T> out(Shape(s.n, s.c, s.h * factor, s.w * factor));
  for (int in = 0; in < s.n; ++in)
    for (int ic = 0; ic < s.c; ++ic)
      for (int y = 0; y < s.h * factor; ++y) {
        const T* srow = x.data() + x.index(in, ic, y / factor, 0);
        T* drow = out.data() + out.index(in, ic, y, 0);
        for (int xx = 0; xx < s.w * factor; ++xx) drow[xx] = srow[xx / factor];
      }

  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    const int f = factor;
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      for (int in = 0; in < s2.n; ++in)
        for (int ic = 0; ic < s2.c; ++ic)
          for (int y = 0; y < s2.h * f; ++y) {
            T* drow = xc.grad() + xc.index(in, ic, y / f, 0);
            const T* grow = oc.grad() + oc.index(in, ic, y, 0);
            for (int xx = 0; xx < s2.w * f; ++xx) drow[xx / f] += grow[xx];
          }
    });
  }
  return out;
}

enum class Axis { Batch, Channel, Height, Width };

namespace detail {
inline void axis_split(const Shape& s, Axis a, int64_t& outer, int64_t& len,
                       int64_t& inner) {
  switch (a) {
    case Axis::Batch:   outer = 1; len = s.n; inner = static_cast<int64_t>(s.c) * s.h * s.w; break;
    case Axis::Channel: outer = s.n; len = s.c; inner = static_cast<int64_t>(s.h) * s.w; break;
    case Axis::Height:  outer = static_cast<int64_t>(s.n) * s.c; len = s.h; inner = s.w; break;
    case Axis::Width:   outer = static_cast<int64_t>(s.n) * s.c * s.h; len = s.w; inner = 1; break;
  }
}
}  // namespace detail

// Exp-normalization along one axis with max subtraction; slices sum to 1.
template <class T>
Tensor<T> softmax_over(const Tensor<T>& x, Axis axis) {
  const Shape s = x.shape();
  int64_t outer, len, inner;
  detail::axis_split(s, axis, outer, len, inner);
  Tensor<T> out(s);
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * len * inner + i;
      T mx = xp[base];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, xp[base + l * inner]);
      T sum = T(0);
      for (int64_t l = 0; l < len; ++l) {
        const T e = std::exp(xp[base + l * inner] - mx);
        op[base + l * inner] = e;
        sum += e;
      }
      const T norm = T(1) / sum;
      for (int64_t l = 0; l < len; ++l) op[base + l * inner] *= norm;
    }

  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    const Axis a = axis;
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      int64_t outer2, len2, inner2;
      detail::axis_split(s2, a, outer2, len2, inner2);
      const T* y = oc.data();
      const T* dy = oc.grad();
      T* dx = xc.grad();
      for (int64_t o = 0; o < outer2; ++o)
        for (int64_t i = 0; i < inner2; ++i) {
          const int64_t base = o * len2 * inner2 + i;
          T dot = T(0);
          for (int64_t l = 0; l < len2; ++l)
            dot += dy[base + l * inner2] * y[base + l * inner2];
          for (int64_t l = 0; l < len2; ++l) {
            const int64_t k = base + l * inner2;
            dx[k] += y[k] * (dy[k] - dot);
          }
        }
    });
  }
  return out;
}

namespace detail {

// shared scaffolding for pointwise unary ops: fwd(v), dfn(x_value, y_value)
template <class T, class F, class D>
Tensor<T> unary_op(const Tensor<T>& x, F fwd, D dfn) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    record_node<T>([=]() mutable {
      const T* xv = xc.data();
      const T* yv = oc.data();
      const T* dy = oc.grad();
      T* dx = xc.grad();
      const int64_t m = xc.numel();
      for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * dfn(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  mark_output(out, on_grad_path(a) || on_grad_path(b));
  if (out.requires_grad()) {
    Tensor<T> ac = a, bc = b, oc = out;
    const bool da = on_grad_path(a), db = on_grad_path(b);
    record_node<T>([=]() mutable {
      const T* dy = oc.grad();
      const int64_t m = oc.numel();
      if (da) { T* g = ac.grad(); for (int64_t i = 0; i < m; ++i) g[i] += dy[i]; }
      if (db) { T* g = bc.grad(); for (int64_t i = 0; i < m; ++i) g[i] += dy[i]; }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  mark_output(out, on_grad_path(a) || on_grad_path(b));
  if (out.requires_grad()) {
    Tensor<T> ac = a, bc = b, oc = out;
    const bool da = on_grad_path(a), db = on_grad_path(b);
    record_node<T>([=]() mutable {
      const T* dy = oc.grad();
      const int64_t m = oc.numel();
      if (da) { T* g = ac.grad(); for (int64_t i = 0; i < m; ++i) g[i] += dy[i]; }
      if (db) { T* g = bc.grad(); for (int64_t i = 0; i < m; ++i) g[i] -= dy[i]; }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  mark_output(out, on_grad_path(a) || on_grad_path(b));
  if (out.requires_grad()) {
    Tensor<T> ac = a, bc = b, oc = out;
    const bool da = on_grad_path(a), db = on_grad_path(b);
    record_node<T>([=]() mutable {
      const T* dy = oc.grad();
      const int64_t m = oc.numel();
      if (da) {
        T* g = ac.grad();
        const T* bv = bc.data();
        for (int64_t i = 0; i < m; ++i) g[i] += dy[i] * bv[i];
      }
      if (db) {
        T* g = bc.grad();
        const T* av = ac.data();
        for (int64_t i = 0; i < m; ++i) g[i] += dy[i] * av[i];
      }
    });
  }
  return out;
}

// x * m with m broadcast over channels (m has c == 1), e.g. mask application.
template <class T>
Tensor<T> mul_bc1(const Tensor<T>& x, const Tensor<T>& m) {
  const Shape xs = x.shape(), ms = m.shape();
  if (ms.c != 1 || ms.n != xs.n || ms.h != xs.h || ms.w != xs.w)
    throw TensorError("mul_bc1: broadcast plane " + ms.str() +
                      " incompatible with " + xs.str());
  Tensor<T> out(xs);
  const int64_t hw = static_cast<int64_t>(xs.h) * xs.w;
  for (int in = 0; in < xs.n; ++in) {
    const T* mp = m.data() + m.index(in, 0, 0, 0);
    for (int ic = 0; ic < xs.c; ++ic) {
      const T* xp = x.data() + x.index(in, ic, 0, 0);
      T* op = out.data() + out.index(in, ic, 0, 0);
      for (int64_t i = 0; i < hw; ++i) op[i] = xp[i] * mp[i];
    }
  }
  mark_output(out, on_grad_path(x) || on_grad_path(m));
  if (out.requires_grad()) {
    Tensor<T> xc = x, mc = m, oc = out;
    const bool dxq = on_grad_path(x), dmq = on_grad_path(m);
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      const int64_t hw2 = static_cast<int64_t>(s2.h) * s2.w;
      for (int in = 0; in < s2.n; ++in) {
        const T* mp = mc.data() + mc.index(in, 0, 0, 0);
        T* mg = dmq ? mc.grad() + mc.index(in, 0, 0, 0) : nullptr;
        for (int ic = 0; ic < s2.c; ++ic) {
          const T* dy = oc.grad() + oc.index(in, ic, 0, 0);
          if (dxq) {
            T* xg = xc.grad() + xc.index(in, ic, 0, 0);
            for (int64_t i = 0; i < hw2; ++i) xg[i] += dy[i] * mp[i];
          }
          if (dmq) {
            const T* xv = xc.data() + xc.index(in, ic, 0, 0);
            for (int64_t i = 0; i < hw2; ++i) mg[i] += dy[i] * xv[i];
          }
        }
      }
    });
  }
  return out;
}

// a*x + b with compile-time-constant coefficients (covers scale and 1-x).
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  return detail::unary_op(x, [a, b](T v) { return a * v + b; },
                          [a](T, T) { return a; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return affine(x, s, T(0));
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                          [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary_op(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                          [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

// |x| with subgradient 0 at the kink
template <class T>
Tensor<T> abs_op(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::abs(v); },
                          [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                    : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// log(max(x, floor)); gradient is 0 where the clamp is active
template <class T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor) {
  return detail::unary_op(x, [floor](T v) { return std::log(std::max(v, floor)); },
                          [floor](T v, T) { return v > floor ? T(1) / v : T(0); });
}

// gamma * x where gamma is a learnable single-element tensor
template <class T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& gamma) {
  if (gamma.numel() != 1)
    throw TensorError("scale_by: gamma must be a single value, got " + gamma.shape().str());
  Tensor<T> out(x.shape());
  const T g = gamma.data()[0];
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = g * x.data()[i];
  mark_output(out, on_grad_path(x) || on_grad_path(gamma));
  if (out.requires_grad()) {
    Tensor<T> xc = x, gc = gamma, oc = out;
    const bool dxq = on_grad_path(x), dgq = on_grad_path(gamma);
    record_node<T>([=]() mutable {
      const T* dy = oc.grad();
      const int64_t m = oc.numel();
      if (dxq) {
        const T gv = gc.data()[0];
        T* xg = xc.grad();
        for (int64_t i = 0; i < m; ++i) xg[i] += dy[i] * gv;
      }
      if (dgq) {
        const T* xv = xc.data();
        T acc = T(0);
        for (int64_t i = 0; i < m; ++i) acc += dy[i] * xv[i];
        gc.grad()[0] += acc;
      }
    });
  }
  return out;
}

// Per-sample per-channel standardization (eps = 1e-5) with affine gain/bias
// of shape (1, c, 1, 1).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  const Shape s = x.shape();
  if (gain.numel() != s.c || bias.numel() != s.c)
    throw TensorError("instance_norm: gain/bias size must equal channel count " +
                      std::to_string(s.c));
  const T eps = T(1e-5);
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  Tensor<T> out(s);
  Tensor<T> xhat(s);  // kept for backward
  std::vector<T> inv_std(static_cast<size_t>(s.n) * s.c);
  for (int in = 0; in < s.n; ++in)
    for (int ic = 0; ic < s.c; ++ic) {
      const T* xp = x.data() + x.index(in, ic, 0, 0);
      T mean = T(0);
      for (int64_t i = 0; i < hw; ++i) mean += xp[i];
      mean /= static_cast<T>(hw);
      T var = T(0);
      for (int64_t i = 0; i < hw; ++i) {
        const T d = xp[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(hw);
      const T inv = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(in) * s.c + ic] = inv;
      const T g = gain.data()[ic], b = bias.data()[ic];
      T* xh = xhat.data() + xhat.index(in, ic, 0, 0);
      T* op = out.data() + out.index(in, ic, 0, 0);
      for (int64_t i = 0; i < hw; ++i) {
        xh[i] = (xp[i] - mean) * inv;
        op[i] = g * xh[i] + b;
      }
    }

  mark_output(out, on_grad_path(x) || on_grad_path(gain) || on_grad_path(bias));
  if (out.requires_grad()) {
    Tensor<T> xc = x, gc = gain, bc = bias, oc = out, xh = xhat;
    std::vector<T> inv = std::move(inv_std);
    const bool dxq = on_grad_path(x), dgq = on_grad_path(gain), dbq = on_grad_path(bias);
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      const int64_t hw2 = static_cast<int64_t>(s2.h) * s2.w;
      for (int in = 0; in < s2.n; ++in)
        for (int ic = 0; ic < s2.c; ++ic) {
          const T* dy = oc.grad() + oc.index(in, ic, 0, 0);
          const T* xhv = xh.data() + xh.index(in, ic, 0, 0);
          if (dgq) {
            T acc = T(0);
            for (int64_t i = 0; i < hw2; ++i) acc += dy[i] * xhv[i];
            gc.grad()[ic] += acc;
          }
          if (dbq) {
            T acc = T(0);
            for (int64_t i = 0; i < hw2; ++i) acc += dy[i];
            bc.grad()[ic] += acc;
          }
          if (dxq) {
            const T g = gc.data()[ic];
            const T is = inv[static_cast<size_t>(in) * s2.c + ic];
            T mean_dxh = T(0), mean_dxh_xh = T(0);
            for (int64_t i = 0; i < hw2; ++i) {
              const T dxh = dy[i] * g;
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhv[i];
            }
            mean_dxh /= static_cast<T>(hw2);
            mean_dxh_xh /= static_cast<T>(hw2);
            T* dx = xc.grad() + xc.index(in, ic, 0, 0);
            for (int64_t i = 0; i < hw2; ++i) {
              const T dxh = dy[i] * g;
              dx[i] += is * (dxh - mean_dxh - xhv[i] * mean_dxh_xh);
            }
          }
        }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw TensorError("concat_channels: empty input list");
  const Shape s0 = xs[0].shape();
  int ctot = 0;
  bool any = false;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw TensorError("concat_channels: spatial/batch mismatch " + s.str() +
                        " vs " + s0.str());
    ctot += s.c;
    any = any || on_grad_path(t);
  }
  Tensor<T> out(Shape(s0.n, ctot, s0.h, s0.w));
  const int64_t hw = static_cast<int64_t>(s0.h) * s0.w;
  for (int in = 0; in < s0.n; ++in) {
    int co = 0;
    for (const auto& t : xs) {
      const int tc = t.shape().c;
      std::copy(t.data() + t.index(in, 0, 0, 0), t.data() + t.index(in, 0, 0, 0) + tc * hw,
                out.data() + out.index(in, co, 0, 0));
      co += tc;
    }
  }
  mark_output(out, any);
  if (out.requires_grad()) {
    std::vector<Tensor<T>> ins = xs;
    Tensor<T> oc = out;
    record_node<T>([=]() mutable {
      const Shape s2 = oc.shape();
      const int64_t hw2 = static_cast<int64_t>(s2.h) * s2.w;
      for (int in = 0; in < s2.n; ++in) {
        int co = 0;
        for (auto& t : ins) {
          const int tc = t.shape().c;
          if (on_grad_path(t)) {
            const T* dy = oc.grad() + oc.index(in, co, 0, 0);
            T* g = t.grad() + t.index(in, 0, 0, 0);
            for (int64_t i = 0; i < tc * hw2; ++i) g[i] += dy[i];
          }
          co += tc;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> narrow_batch(const Tensor<T>& x, int start, int len) {
  const Shape s = x.shape();
  if (start < 0 || len < 1 || start + len > s.n)
    throw TensorError("narrow_batch: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") outside batch " + std::to_string(s.n));
  Tensor<T> out(Shape(len, s.c, s.h, s.w));
  std::copy(x.data() + x.index(start, 0, 0, 0),
            x.data() + x.index(start, 0, 0, 0) + out.numel(), out.data());
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    const int st = start;
    record_node<T>([=]() mutable {
      const T* dy = oc.grad();
      T* g = xc.grad() + xc.index(st, 0, 0, 0);
      for (int64_t i = 0; i < oc.numel(); ++i) g[i] += dy[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw TensorError("concat_batch: empty input list");
  const Shape s0 = xs[0].shape();
  int ntot = 0;
  bool any = false;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    if (s.c != s0.c || s.h != s0.h || s.w != s0.w)
      throw TensorError("concat_batch: shape mismatch " + s.str() + " vs " + s0.str());
    ntot += s.n;
    any = any || on_grad_path(t);
  }
  Tensor<T> out(Shape(ntot, s0.c, s0.h, s0.w));
  int64_t off = 0;
  for (const auto& t : xs) {
    std::copy(t.data(), t.data() + t.numel(), out.data() + off);
    off += t.numel();
  }
  mark_output(out, any);
  if (out.requires_grad()) {
    std::vector<Tensor<T>> ins = xs;
    Tensor<T> oc = out;
    record_node<T>([=]() mutable {
      int64_t o2 = 0;
      for (auto& t : ins) {
        if (on_grad_path(t)) {
          const T* dy = oc.grad() + o2;
          T* g = t.grad();
          for (int64_t i = 0; i < t.numel(); ++i) g[i] += dy[i];
        }
        o2 += t.numel();
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out(Shape(1, 1, 1, 1));
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    record_node<T>([=]() mutable {
      const T d = oc.grad()[0];
      T* g = xc.grad();
      for (int64_t i = 0; i < xc.numel(); ++i) g[i] += d;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  Tensor<T> out(Shape(1, 1, 1, 1));
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  out.data()[0] = acc / static_cast<T>(x.numel());
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    record_node<T>([=]() mutable {
      const T d = oc.grad()[0] / static_cast<T>(xc.numel());
      T* g = xc.grad();
      for (int64_t i = 0; i < xc.numel(); ++i) g[i] += d;
    });
  }
  return out;
}

// mean |x - y| over all elements; |.| subgradient at 0 is 0
template <class T>
Tensor<T> mean_abs_diff(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_same_shape(x, y, "mean_abs_diff");
  Tensor<T> out(Shape(1, 1, 1, 1));
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += std::abs(x.data()[i] - y.data()[i]);
  out.data()[0] = acc / static_cast<T>(x.numel());
  mark_output(out, on_grad_path(x) || on_grad_path(y));
  if (out.requires_grad()) {
    Tensor<T> xc = x, yc = y, oc = out;
    const bool dxq = on_grad_path(x), dyq = on_grad_path(y);
    record_node<T>([=]() mutable {
      const T d = oc.grad()[0] / static_cast<T>(xc.numel());
      for (int64_t i = 0; i < xc.numel(); ++i) {
        const T diff = xc.data()[i] - yc.data()[i];
        const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        if (dxq) xc.grad()[i] += d * s;
        if (dyq) yc.grad()[i] -= d * s;
      }
    });
  }
  return out;
}

// Extracts every kxk patch at the given stride from a single-sample map as
// the leading "batch" dimension: (m, c, k, k).
template <class T>
Tensor<T> extract_patches(const Tensor<T>& x, int k, int stride) {
  const Shape s = x.shape();
  if (s.n != 1) throw TensorError("extract_patches: expects a single sample");
  if (s.h < k || s.w < k)
    throw TensorError("extract_patches: patch size " + std::to_string(k) +
                      " exceeds map " + std::to_string(s.h) + "x" + std::to_string(s.w));
  const int ph = (s.h - k) / stride + 1;
  const int pw = (s.w - k) / stride + 1;
  Tensor<T> out(Shape(ph * pw, s.c, k, k));
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      const int p = py * pw + px;
      for (int ic = 0; ic < s.c; ++ic)
        for (int ki = 0; ki < k; ++ki) {
          const T* srow = x.data() + x.index(0, ic, py * stride + ki, px * stride);
          T* drow = out.data() + out.index(p, ic, ki, 0);
          std::copy(srow, srow + k, drow);
        }
    }
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    const int kk = k, st = stride, ph2 = ph, pw2 = pw;
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      for (int py = 0; py < ph2; ++py)
        for (int px = 0; px < pw2; ++px) {
          const int p = py * pw2 + px;
          for (int ic = 0; ic < s2.c; ++ic)
            for (int ki = 0; ki < kk; ++ki) {
              const T* grow = oc.grad() + oc.index(p, ic, ki, 0);
              T* drow = xc.grad() + xc.index(0, ic, py * st + ki, px * st);
              for (int kj = 0; kj < kk; ++kj) drow[kj] += grow[kj];
            }
        }
    });
  }
  return out;
}

// Normalizes each filter (leading dim) to unit L2 norm; eps guards zero-norm
// filters, in which case the denominator is held at eps.
template <class T>
Tensor<T> l2_normalize_filters(const Tensor<T>& w, T eps) {
  const Shape s = w.shape();
  const int64_t fs = static_cast<int64_t>(s.c) * s.h * s.w;
  Tensor<T> out(s);
  std::vector<T> norms(s.n);
  for (int i = 0; i < s.n; ++i) {
    const T* wp = w.data() + i * fs;
    T sq = T(0);
    for (int64_t j = 0; j < fs; ++j) sq += wp[j] * wp[j];
    const T nrm = std::sqrt(sq);
    norms[i] = nrm;
    const T denom = std::max(nrm, eps);
    T* op = out.data() + i * fs;
    for (int64_t j = 0; j < fs; ++j) op[j] = wp[j] / denom;
  }
  mark_output(out, on_grad_path(w));
  if (out.requires_grad()) {
    Tensor<T> wc = w, oc = out;
    std::vector<T> nrm = std::move(norms);
    const T ep = eps;
    record_node<T>([=]() mutable {
      const Shape s2 = wc.shape();
      const int64_t fs2 = static_cast<int64_t>(s2.c) * s2.h * s2.w;
      for (int i = 0; i < s2.n; ++i) {
        const T* dy = oc.grad() + i * fs2;
        const T* wv = wc.data() + i * fs2;
        T* g = wc.grad() + i * fs2;
        if (nrm[i] > ep) {
          const T n1 = nrm[i];
          T dot = T(0);
          for (int64_t j = 0; j < fs2; ++j) dot += dy[j] * wv[j];
          const T n3 = n1 * n1 * n1;
          for (int64_t j = 0; j < fs2; ++j) g[j] += dy[j] / n1 - wv[j] * dot / n3;
        } else {
          for (int64_t j = 0; j < fs2; ++j) g[j] += dy[j] / ep;
        }
      }
    });
  }
  return out;
}

// Channel Gram matrix per sample: G_ab = sum_hw x_a x_b / (c*h*w), shape (n,c,c,1).
template <class T>
Tensor<T> gram(const Tensor<T>& x) {
  const Shape s = x.shape();
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  const T norm = T(1) / (static_cast<T>(s.c) * static_cast<T>(hw));
  Tensor<T> out(Shape(s.n, s.c, s.c, 1));
  for (int in = 0; in < s.n; ++in) {
    Eigen::Map<const detail::MatRM<T>> X(x.data() + x.index(in, 0, 0, 0), s.c, hw);
    Eigen::Map<detail::MatRM<T>> G(out.data() + out.index(in, 0, 0, 0), s.c, s.c);
    G.noalias() = X * X.transpose();
    G *= norm;
  }
  mark_output(out, on_grad_path(x));
  if (out.requires_grad()) {
    Tensor<T> xc = x, oc = out;
    const T nm = norm;
    record_node<T>([=]() mutable {
      const Shape s2 = xc.shape();
      const int64_t hw2 = static_cast<int64_t>(s2.h) * s2.w;
      for (int in = 0; in < s2.n; ++in) {
        Eigen::Map<const detail::MatRM<T>> X(xc.data() + xc.index(in, 0, 0, 0), s2.c, hw2);
        Eigen::Map<const detail::MatRM<T>> dG(oc.grad() + oc.index(in, 0, 0, 0), s2.c, s2.c);
        Eigen::Map<detail::MatRM<T>> dX(xc.grad() + xc.index(in, 0, 0, 0), s2.c, hw2);
        dX.noalias() += nm * ((dG + dG.transpose()) * X);
      }
    });
  }
  return out;
}

template <class T>
inline void check_finite_or_throw(const Tensor<T>& t, const std::string& name) {
  if (!t.all_finite())
    throw TensorError(name + ": non-finite values detected");
}

}  // namespace sfill
