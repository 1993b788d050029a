#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "octforce/tensor.hpp"

namespace octforce::ad {

enum class Pad { same, valid };

struct ConvGeom {
  int out_len;
  int pad_left;
};

// "same": out = ceil(len/stride), zero padding split left/right (TF style).
// "valid": no padding, out = floor((len-k)/stride) + 1.
inline ConvGeom conv_geometry(int len, int k, int stride, Pad pad) {
  if (stride < 1) throw ShapeError("conv: stride must be >= 1, got " + std::to_string(stride));
  if (k < 1 || k % 2 == 0) throw ShapeError("conv: kernel must be odd, got " + std::to_string(k));
  if (pad == Pad::same) {
    int out = (len + stride - 1) / stride;
    int pad_total = std::max(0, (out - 1) * stride + k - len);
    return {out, pad_total / 2};
  }
  if (len < k) throw ShapeError("conv: valid padding needs length >= kernel, got length " +
                                std::to_string(len) + " < kernel " + std::to_string(k));
  return {(len - k) / stride + 1, 0};
}

namespace detail {

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// --------------------------- elementwise ----------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
  if (detail::tracing<T>({&a, &b})) {
    y.set_wants_grad(true);
    detail::record<T>({&a, &b}, [a = a, b = b, y = y]() mutable {
      const T* g = y.grad_data();
      const std::size_t m = y.size();
      if (a.wants_grad()) {
        T* ga = a.grad_data();
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.wants_grad()) {
        T* gb = b.grad_data();
        for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] - pb[i];
  if (detail::tracing<T>({&a, &b})) {
    y.set_wants_grad(true);
    detail::record<T>({&a, &b}, [a = a, b = b, y = y]() mutable {
      const T* g = y.grad_data();
      const std::size_t m = y.size();
      if (a.wants_grad()) {
        T* ga = a.grad_data();
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.wants_grad()) {
        T* gb = b.grad_data();
        for (std::size_t i = 0; i < m; ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
  if (detail::tracing<T>({&a, &b})) {
    y.set_wants_grad(true);
    detail::record<T>({&a, &b}, [a = a, b = b, y = y]() mutable {
      const T* g = y.grad_data();
      const std::size_t m = y.size();
      if (a.wants_grad()) {
        T* ga = a.grad_data();
        const T* pb2 = b.data();
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
      }
      if (b.wants_grad()) {
        T* gb = b.grad_data();
        const T* pa2 = a.data();
        for (std::size_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& a) {
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* py = y.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = T(1) - pa[i];
  if (detail::tracing<T>({&a})) {
    y.set_wants_grad(true);
    detail::record<T>({&a}, [a = a, y = y]() mutable {
      const T* g = y.grad_data();
      T* ga = a.grad_data();
      const std::size_t m = y.size();
      for (std::size_t i = 0; i < m; ++i) ga[i] -= g[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* py = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = px[i];
    if (v >= T(0)) {
      py[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      py[i] = e / (T(1) + e);
    }
  }
  if (detail::tracing<T>({&x})) {
    y.set_wants_grad(true);
    detail::record<T>({&x}, [x = x, y = y]() mutable {
      const T* g = y.grad_data();
      const T* s = y.data();
      T* gx = x.grad_data();
      const std::size_t m = y.size();
      for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
    });
  }
  return y;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* py = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = std::tanh(px[i]);
  if (detail::tracing<T>({&x})) {
    y.set_wants_grad(true);
    detail::record<T>({&x}, [x = x, y = y]() mutable {
      const T* g = y.grad_data();
      const T* t = y.data();
      T* gx = x.grad_data();
      const std::size_t m = y.size();
      for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * (T(1) - t[i] * t[i]);
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* py = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
  if (detail::tracing<T>({&x})) {
    y.set_wants_grad(true);
    detail::record<T>({&x}, [x = x, y = y]() mutable {
      const T* g = y.grad_data();
      const T* px2 = x.data();
      T* gx = x.grad_data();
      const std::size_t m = y.size();
      for (std::size_t i = 0; i < m; ++i)
        if (px2[i] > T(0)) gx[i] += g[i];
    });
  }
  return y;
}

// ------------------------------ dense -------------------------------------

namespace detail {

template <typename T>
Tensor<T> dense_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (x.rank() != 2) throw ShapeError("dense: input must be [batch, in], got " + shape_str(x.shape()));
  if (w.rank() != 2) throw ShapeError("dense: weight must be [out, in], got " + shape_str(w.shape()));
  const int B = x.dim(0), I = x.dim(1), O = w.dim(0);
  if (w.dim(1) != I)
    throw ShapeError("dense: input features " + std::to_string(I) + " != weight in-dim " +
                     std::to_string(w.dim(1)));
  if (bias && (bias->rank() != 1 || bias->dim(0) != O))
    throw ShapeError("dense: bias must be [" + std::to_string(O) + "], got " +
                     shape_str(bias->shape()));

  Tensor<T> y = Tensor<T>::zeros({B, O});
  const T* px = x.data();
  const T* pw = w.data();
  T* py = y.data();
  for (int b = 0; b < B; ++b) {
    const T* xr = px + static_cast<std::size_t>(b) * I;
    T* yr = py + static_cast<std::size_t>(b) * O;
    for (int o = 0; o < O; ++o) {
      const T* wr = pw + static_cast<std::size_t>(o) * I;
      T acc = bias ? bias->data()[o] : T(0);
      for (int i = 0; i < I; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }

  const bool trace = bias ? detail::tracing<T>({&x, &w, bias}) : detail::tracing<T>({&x, &w});
  if (trace) {
    y.set_wants_grad(true);
    Tensor<T> bcap = bias ? *bias : Tensor<T>();
    auto fn = [x = x, w = w, bcap, y = y, B, I, O]() mutable {
      const T* g = y.grad_data();
      if (x.wants_grad()) {
        T* gx = x.grad_data();
        const T* pw2 = w.data();
        for (int b = 0; b < B; ++b) {
          const T* gr = g + static_cast<std::size_t>(b) * O;
          T* gxr = gx + static_cast<std::size_t>(b) * I;
          for (int o = 0; o < O; ++o) {
            const T gv = gr[o];
            const T* wr = pw2 + static_cast<std::size_t>(o) * I;
            for (int i = 0; i < I; ++i) gxr[i] += gv * wr[i];
          }
        }
      }
      if (w.wants_grad()) {
        T* gw = w.grad_data();
        const T* px2 = x.data();
        for (int b = 0; b < B; ++b) {
          const T* gr = g + static_cast<std::size_t>(b) * O;
          const T* xr = px2 + static_cast<std::size_t>(b) * I;
          for (int o = 0; o < O; ++o) {
            const T gv = gr[o];
            T* gwr = gw + static_cast<std::size_t>(o) * I;
            for (int i = 0; i < I; ++i) gwr[i] += gv * xr[i];
          }
        }
      }
      if (bcap.defined() && bcap.wants_grad()) {
        T* gb = bcap.grad_data();
        for (int b = 0; b < B; ++b) {
          const T* gr = g + static_cast<std::size_t>(b) * O;
          for (int o = 0; o < O; ++o) gb[o] += gr[o];
        }
      }
    };
    if (bias)
      detail::record<T>({&x, &w, bias}, std::move(fn));
    else
      detail::record<T>({&x, &w}, std::move(fn));
  }
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w) {
  return detail::dense_impl<T>(x, w, nullptr);
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  return detail::dense_impl(x, w, &bias);
}

// ------------------------------ conv1d ------------------------------------

namespace detail {

// Cross-correlation, channels-first layout. The (o, xi) ranges below keep all
// accesses in-bounds, so zero padding never materializes.
template <typename T>
Tensor<T> conv1d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                      Pad pad) {
  if (x.rank() != 3)
    throw ShapeError("conv1d: input must be [batch, channels, length], got " + shape_str(x.shape()));
  if (w.rank() != 3)
    throw ShapeError("conv1d: kernel must be [out, in, k], got " + shape_str(w.shape()));
  const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const int Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Cin)
    throw ShapeError("conv1d: input channels " + std::to_string(Cin) + " != kernel in-channels " +
                     std::to_string(w.dim(1)));
  if (bias && (bias->rank() != 1 || bias->dim(0) != Cout))
    throw ShapeError("conv1d: bias must be [" + std::to_string(Cout) + "], got " +
                     shape_str(bias->shape()));
  const ConvGeom geom = conv_geometry(L, K, stride, pad);
  const int Lo = geom.out_len, P = geom.pad_left;

  Tensor<T> y = Tensor<T>::zeros({B, Cout, Lo});
  const T* px = x.data();
  const T* pw = w.data();
  T* py = y.data();
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      T* yr = py + (static_cast<std::size_t>(b) * Cout + oc) * Lo;
      if (bias) {
        const T bv = bias->data()[oc];
        for (int o = 0; o < Lo; ++o) yr[o] = bv;
      }
      for (int ic = 0; ic < Cin; ++ic) {
        const T* xr = px + (static_cast<std::size_t>(b) * Cin + ic) * L;
        const T* wr = pw + (static_cast<std::size_t>(oc) * Cin + ic) * K;
        for (int k = 0; k < K; ++k) {
          const T wv = wr[k];
          const int shift = k - P;
          int o_lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
          int o_hi = (L - 1 - shift) / stride;  // inclusive
          if (o_hi > Lo - 1) o_hi = Lo - 1;
          const T* xs = xr + static_cast<std::size_t>(o_lo) * stride + shift;
          for (int o = o_lo; o <= o_hi; ++o, xs += stride) yr[o] += wv * *xs;
        }
      }
    }
  }

  const bool trace = bias ? detail::tracing<T>({&x, &w, bias}) : detail::tracing<T>({&x, &w});
  if (trace) {
    y.set_wants_grad(true);
    Tensor<T> bcap = bias ? *bias : Tensor<T>();
    auto fn = [x = x, w = w, bcap, y = y, B, Cin, Cout, L, K, Lo, P, stride]() mutable {
      const T* g = y.grad_data();
      const T* px2 = x.data();
      const T* pw2 = w.data();
      T* gx = x.wants_grad() ? x.grad_data() : nullptr;
      T* gw = w.wants_grad() ? w.grad_data() : nullptr;
      T* gb = (bcap.defined() && bcap.wants_grad()) ? bcap.grad_data() : nullptr;
      for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
          const T* gr = g + (static_cast<std::size_t>(b) * Cout + oc) * Lo;
          if (gb) {
            T acc = T(0);
            for (int o = 0; o < Lo; ++o) acc += gr[o];
            gb[oc] += acc;
          }
          if (!gx && !gw) continue;
          for (int ic = 0; ic < Cin; ++ic) {
            const T* xr = px2 + (static_cast<std::size_t>(b) * Cin + ic) * L;
            const T* wr = pw2 + (static_cast<std::size_t>(oc) * Cin + ic) * K;
            T* gxr = gx ? gx + (static_cast<std::size_t>(b) * Cin + ic) * L : nullptr;
            T* gwr = gw ? gw + (static_cast<std::size_t>(oc) * Cin + ic) * K : nullptr;
            for (int k = 0; k < K; ++k) {
              const int shift = k - P;
              int o_lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
              int o_hi = (L - 1 - shift) / stride;
              if (o_hi > Lo - 1) o_hi = Lo - 1;
              if (gwr) {
                const T* xs = xr + static_cast<std::size_t>(o_lo) * stride + shift;
                T acc = T(0);
                for (int o = o_lo; o <= o_hi; ++o, xs += stride) acc += gr[o] * *xs;
                gwr[k] += acc;
              }
              if (gxr) {
                const T wv = wr[k];
                T* xds = gxr + static_cast<std::size_t>(o_lo) * stride + shift;
                for (int o = o_lo; o <= o_hi; ++o, xds += stride) *xds += wv * gr[o];
              }
            }
          }
        }
      }
    };
    if (bias)
      detail::record<T>({&x, &w, bias}, std::move(fn));
    else
      detail::record<T>({&x, &w}, std::move(fn));
  }
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, int stride, Pad pad) {
  return detail::conv1d_impl<T>(x, w, nullptr, stride, pad);
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 Pad pad) {
  return detail::conv1d_impl(x, w, &bias, stride, pad);
}

// ------------------------------ conv2d ------------------------------------

namespace detail {

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride_h,
                      int stride_w, Pad pad) {
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be [batch, channels, h, w], got " + shape_str(x.shape()));
  if (w.rank() != 4)
    throw ShapeError("conv2d: kernel must be [out, in, kh, kw], got " + shape_str(w.shape()));
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (w.dim(1) != Cin)
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) + " != kernel in-channels " +
                     std::to_string(w.dim(1)));
  if (bias && (bias->rank() != 1 || bias->dim(0) != Cout))
    throw ShapeError("conv2d: bias must be [" + std::to_string(Cout) + "], got " +
                     shape_str(bias->shape()));
  const ConvGeom gh = conv_geometry(H, KH, stride_h, pad);
  const ConvGeom gw_ = conv_geometry(W, KW, stride_w, pad);
  const int Ho = gh.out_len, Wo = gw_.out_len, PH = gh.pad_left, PW = gw_.pad_left;

  Tensor<T> y = Tensor<T>::zeros({B, Cout, Ho, Wo});
  const T* px = x.data();
  const T* pw = w.data();
  T* py = y.data();
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      T* yp = py + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
      if (bias) {
        const T bv = bias->data()[oc];
        for (int i = 0; i < Ho * Wo; ++i) yp[i] = bv;
      }
      for (int ic = 0; ic < Cin; ++ic) {
        const T* xp = px + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
        const T* wp = pw + ((static_cast<std::size_t>(oc) * Cin + ic) * KH) * KW;
        for (int kh = 0; kh < KH; ++kh) {
          const int sh = kh - PH;
          int oh_lo = sh < 0 ? (-sh + stride_h - 1) / stride_h : 0;
          int oh_hi = std::min(Ho - 1, (H - 1 - sh) / stride_h);
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = wp[kh * KW + kw];
            const int sw = kw - PW;
            int ow_lo = sw < 0 ? (-sw + stride_w - 1) / stride_w : 0;
            int ow_hi = std::min(Wo - 1, (W - 1 - sw) / stride_w);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const T* xrow = xp + static_cast<std::size_t>(oh * stride_h + sh) * W + sw;
              T* yrow = yp + static_cast<std::size_t>(oh) * Wo;
              for (int ow = ow_lo; ow <= ow_hi; ++ow)
                yrow[ow] += wv * xrow[static_cast<std::size_t>(ow) * stride_w];
            }
          }
        }
      }
    }
  }

  const bool trace = bias ? detail::tracing<T>({&x, &w, bias}) : detail::tracing<T>({&x, &w});
  if (trace) {
    y.set_wants_grad(true);
    Tensor<T> bcap = bias ? *bias : Tensor<T>();
    auto fn = [x = x, w = w, bcap, y = y, B, Cin, Cout, H, W, KH, KW, Ho, Wo, PH, PW, stride_h,
               stride_w]() mutable {
      const T* g = y.grad_data();
      const T* px2 = x.data();
      const T* pw2 = w.data();
      T* gx = x.wants_grad() ? x.grad_data() : nullptr;
      T* gw = w.wants_grad() ? w.grad_data() : nullptr;
      T* gb = (bcap.defined() && bcap.wants_grad()) ? bcap.grad_data() : nullptr;
      for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
          const T* gp = g + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
          if (gb) {
            T acc = T(0);
            for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
            gb[oc] += acc;
          }
          if (!gx && !gw) continue;
          for (int ic = 0; ic < Cin; ++ic) {
            const T* xp = px2 + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
            const T* wp = pw2 + ((static_cast<std::size_t>(oc) * Cin + ic) * KH) * KW;
            T* gxp = gx ? gx + (static_cast<std::size_t>(b) * Cin + ic) * H * W : nullptr;
            T* gwp = gw ? gw + ((static_cast<std::size_t>(oc) * Cin + ic) * KH) * KW : nullptr;
            for (int kh = 0; kh < KH; ++kh) {
              const int sh = kh - PH;
              int oh_lo = sh < 0 ? (-sh + stride_h - 1) / stride_h : 0;
              int oh_hi = std::min(Ho - 1, (H - 1 - sh) / stride_h);
              for (int kw = 0; kw < KW; ++kw) {
                const int sw = kw - PW;
                int ow_lo = sw < 0 ? (-sw + stride_w - 1) / stride_w : 0;
                int ow_hi = std::min(Wo - 1, (W - 1 - sw) / stride_w);
                if (gwp) {
                  T acc = T(0);
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const T* xrow = xp + static_cast<std::size_t>(oh * stride_h + sh) * W + sw;
                    const T* grow = gp + static_cast<std::size_t>(oh) * Wo;
                    for (int ow = ow_lo; ow <= ow_hi; ++ow)
                      acc += grow[ow] * xrow[static_cast<std::size_t>(ow) * stride_w];
                  }
                  gwp[kh * KW + kw] += acc;
                }
                if (gxp) {
                  const T wv = wp[kh * KW + kw];
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    T* xdrow = gxp + static_cast<std::size_t>(oh * stride_h + sh) * W + sw;
                    const T* grow = gp + static_cast<std::size_t>(oh) * Wo;
                    for (int ow = ow_lo; ow <= ow_hi; ++ow)
                      xdrow[static_cast<std::size_t>(ow) * stride_w] += wv * grow[ow];
                  }
                }
              }
            }
          }
        }
      }
    };
    if (bias)
      detail::record<T>({&x, &w, bias}, std::move(fn));
    else
      detail::record<T>({&x, &w}, std::move(fn));
  }
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride_h, int stride_w, Pad pad) {
  return detail::conv2d_impl<T>(x, w, nullptr, stride_h, stride_w, pad);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride_h,
                 int stride_w, Pad pad) {
  return detail::conv2d_impl(x, w, &bias, stride_h, stride_w, pad);
}

// ------------------------------ reductions --------------------------------

// [batch, ch, len] or [batch, ch, h, w] -> [batch, ch], mean over space.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3 && x.rank() != 4)
    throw ShapeError("global_avg_pool: expected rank 3 or 4, got " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1);
  const int S = x.rank() == 3 ? x.dim(2) : x.dim(2) * x.dim(3);
  Tensor<T> y = Tensor<T>::zeros({B, C});
  const T* px = x.data();
  T* py = y.data();
  const T inv = T(1) / static_cast<T>(S);
  for (int bc = 0; bc < B * C; ++bc) {
    const T* xr = px + static_cast<std::size_t>(bc) * S;
    T acc = T(0);
    for (int i = 0; i < S; ++i) acc += xr[i];
    py[bc] = acc * inv;
  }
  if (detail::tracing<T>({&x})) {
    y.set_wants_grad(true);
    detail::record<T>({&x}, [x = x, y = y, B, C, S, inv]() mutable {
      const T* g = y.grad_data();
      T* gx = x.grad_data();
      for (int bc = 0; bc < B * C; ++bc) {
        const T gv = g[bc] * inv;
        T* gr = gx + static_cast<std::size_t>(bc) * S;
        for (int i = 0; i < S; ++i) gr[i] += gv;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros({1});
  const T* px = x.data();
  T acc = T(0);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  y.data()[0] = acc;
  if (detail::tracing<T>({&x})) {
    y.set_wants_grad(true);
    detail::record<T>({&x}, [x = x, y = y]() mutable {
      const T g = y.grad_data()[0];
      T* gx = x.grad_data();
      const std::size_t m = x.size();
      for (std::size_t i = 0; i < m; ++i) gx[i] += g;
    });
  }
  return y;
}

// Mean over all elements of the squared difference.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.size() != target.size())
    throw ShapeError("mse_loss: prediction has " + std::to_string(pred.size()) +
                     " elements, target has " + std::to_string(target.size()));
  const std::size_t n = pred.size();
  if (n == 0) throw ShapeError("mse_loss: empty input");
  Tensor<T> y = Tensor<T>::zeros({1});
  const T* pp = pred.data();
  const T* pt = target.data();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pp[i] - pt[i];
    acc += d * d;
  }
  y.data()[0] = acc / static_cast<T>(n);
  if (detail::tracing<T>({&pred, &target})) {
    y.set_wants_grad(true);
    detail::record<T>({&pred, &target}, [pred = pred, target = target, y = y, n]() mutable {
      const T g = y.grad_data()[0];
      const T scale = g * T(2) / static_cast<T>(n);
      const T* pp2 = pred.data();
      const T* pt2 = target.data();
      if (pred.wants_grad()) {
        T* gp = pred.grad_data();
        for (std::size_t i = 0; i < n; ++i) gp[i] += scale * (pp2[i] - pt2[i]);
      }
      if (target.wants_grad()) {
        T* gt = target.grad_data();
        for (std::size_t i = 0; i < n; ++i) gt[i] -= scale * (pp2[i] - pt2[i]);
      }
    });
  }
  return y;
}

}  // namespace octforce::ad
