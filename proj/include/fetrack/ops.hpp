#pragma once

// Dense math kernels: linear maps, layer norm, activations, depthwise causal
// conv1d. Forward and hand-written backward for each (no autodiff graph).
// All kernels are pure and deterministic within one precision mode.

#include <cmath>
#include <cstdint>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"

namespace fetrack {

// ---------------------------------------------------------------- scalars

template <typename T>
inline T sigmoid_s(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T silu_s(T x) {
  return x * sigmoid_s(x);
}

// d/dx silu = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
template <typename T>
inline T silu_grad_s(T x) {
  const T s = sigmoid_s(x);
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
inline T softplus_s(T x) {
  if (x > T(30)) return x;  // exp would overflow float; identity to 1 ulp
  return std::log1p(std::exp(x));
}

// ----------------------------------------------------------- elementwise

template <typename T>
DenseArray<T> silu(const DenseArray<T>& x) {
  DenseArray<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = silu_s(x[i]);
  return y;
}

// gx = gy * silu'(x)
template <typename T>
void silu_backward(const DenseArray<T>& x, const DenseArray<T>& gy, DenseArray<T>& gx) {
  FETRACK_CHECK_DIM(x.same_shape(gy), "silu_backward: shape mismatch");
  if (!gx.same_shape(x)) gx = DenseArray<T>(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] = gy[i] * silu_grad_s(x[i]);
}

template <typename T>
DenseArray<T> sigmoid(const DenseArray<T>& x) {
  DenseArray<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = sigmoid_s(x[i]);
  return y;
}

// ----------------------------------------------------------------- linear

// y[M,N] += x[M,K] * w[K,N]; row-major, j-contiguous inner loop.
template <typename T>
void matmul_acc(const T* __restrict x, const T* __restrict w, T* __restrict y,
                std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* xi = x + i * k;
    T* yi = y + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T a = xi[p];
      if (a == T(0)) continue;
      const T* wp = w + p * n;
      for (std::int64_t j = 0; j < n; ++j) yi[j] += a * wp[j];
    }
  }
}

// x is treated as [rows, in] where rows = numel/in; w: [in, out]; b: [out] or empty.
template <typename T>
DenseArray<T> linear(const DenseArray<T>& x, const DenseArray<T>& w, const DenseArray<T>& b) {
  FETRACK_CHECK_DIM(w.ndim() == 2, "linear: weight must be 2-d");
  const std::int64_t in = w.extent(0), out = w.extent(1);
  FETRACK_CHECK_DIM(x.numel() % in == 0, "linear: input width mismatch");
  const std::int64_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = out;
  DenseArray<T> y(os);
  if (!b.empty()) {
    FETRACK_CHECK_DIM(b.numel() == out, "linear: bias length mismatch");
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < out; ++j) y[r * out + j] = b[j];
  }
  matmul_acc(x.data(), w.data(), y.data(), rows, in, out);
  return y;
}

// Accumulates into gw/gb; writes gx. Pass gw/gb sized like w/b (may carry
// prior accumulation from other samples in the batch).
template <typename T>
void linear_backward(const DenseArray<T>& x, const DenseArray<T>& w, const DenseArray<T>& gy,
                     DenseArray<T>& gx, DenseArray<T>& gw, DenseArray<T>& gb) {
  const std::int64_t in = w.extent(0), out = w.extent(1);
  const std::int64_t rows = x.numel() / in;
  if (!gx.same_shape(x)) gx = DenseArray<T>(x.shape());
  else gx.fill(T(0));
  const T* __restrict xd = x.data();
  const T* __restrict wd = w.data();
  const T* __restrict gyd = gy.data();
  T* __restrict gxd = gx.data();
  T* __restrict gwd = gw.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* gyr = gyd + r * out;
    const T* xr = xd + r * in;
    T* gxr = gxd + r * in;
    for (std::int64_t p = 0; p < in; ++p) {
      const T* wp = wd + p * out;
      T acc = T(0);
      for (std::int64_t j = 0; j < out; ++j) acc += gyr[j] * wp[j];
      gxr[p] = acc;
      T* gwp = gwd + p * out;
      const T a = xr[p];
      for (std::int64_t j = 0; j < out; ++j) gwp[j] += a * gyr[j];
    }
    if (!gb.empty())
      for (std::int64_t j = 0; j < out; ++j) gb[j] += gyr[j];
  }
}

// -------------------------------------------------------------- layer norm

// Normalizes over the last axis; saves per-row mean and reciprocal std for
// the backward pass. Population variance (1/C), eps inside the sqrt.
template <typename T>
struct LayerNormCtx {
  DenseArray<T> mean;  // (rows)
  DenseArray<T> rstd;  // (rows)
};

template <typename T>
DenseArray<T> layer_norm(const DenseArray<T>& x, const DenseArray<T>& scale,
                         const DenseArray<T>& bias, T eps, LayerNormCtx<T>* ctx = nullptr) {
  FETRACK_CHECK_DIM(x.ndim() >= 1, "layer_norm: rank 0 input");
  const std::int64_t c = x.shape().back();
  FETRACK_CHECK_DIM(scale.numel() == c && bias.numel() == c,
                    "layer_norm: affine length does not match last axis");
  FETRACK_CHECK_VALUE(eps >= T(0), "layer_norm: negative eps");
  const std::int64_t rows = x.numel() / c;
  DenseArray<T> y(x.shape());
  if (ctx) {
    ctx->mean = DenseArray<T>({rows});
    ctx->rstd = DenseArray<T>({rows});
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * c;
    T* yr = y.data() + r * c;
    T mu = T(0);
    for (std::int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= T(c);
    T var = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      const T d = xr[j] - mu;
      var += d * d;
    }
    var /= T(c);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < c; ++j) yr[j] = (xr[j] - mu) * rs * scale[j] + bias[j];
    if (ctx) {
      ctx->mean[r] = mu;
      ctx->rstd[r] = rs;
    }
  }
  return y;
}

template <typename T>
void layer_norm_backward(const DenseArray<T>& x, const DenseArray<T>& scale,
                         const LayerNormCtx<T>& ctx, const DenseArray<T>& gy,
                         DenseArray<T>& gx, DenseArray<T>& gscale, DenseArray<T>& gbias) {
  const std::int64_t c = x.shape().back();
  const std::int64_t rows = x.numel() / c;
  if (!gx.same_shape(x)) gx = DenseArray<T>(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * c;
    const T* gyr = gy.data() + r * c;
    T* gxr = gx.data() + r * c;
    const T mu = ctx.mean[r], rs = ctx.rstd[r];
    T sum_g = T(0), sum_gx = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T g = gyr[j] * scale[j];
      sum_g += g;
      sum_gx += g * xhat;
      gscale[j] += gyr[j] * xhat;
      gbias[j] += gyr[j];
    }
    const T inv_c = T(1) / T(c);
    for (std::int64_t j = 0; j < c; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T g = gyr[j] * scale[j];
      gxr[j] = rs * (g - sum_g * inv_c - xhat * sum_gx * inv_c);
    }
  }
}

// ------------------------------------------------------ depthwise conv1d

// out[t,d] = sum_k kernel[k,d] * x[t-K+1+k, d], zeros left of t=0.
// Causal-left padding keeps the token count unchanged.
template <typename T>
DenseArray<T> dw_conv1d(const DenseArray<T>& x, const DenseArray<T>& kernel) {
  FETRACK_CHECK_DIM(x.ndim() == 2 && kernel.ndim() == 2, "dw_conv1d: rank-2 inputs required");
  const std::int64_t L = x.extent(0), D = x.extent(1), K = kernel.extent(0);
  FETRACK_CHECK_DIM(kernel.extent(1) == D, "dw_conv1d: channel mismatch");
  FETRACK_CHECK_DIM(K >= 1, "dw_conv1d: empty kernel");
  DenseArray<T> y({L, D});
  for (std::int64_t t = 0; t < L; ++t) {
    T* yt = y.data() + t * D;
    for (std::int64_t k = 0; k < K; ++k) {
      const std::int64_t s = t - K + 1 + k;
      if (s < 0) continue;
      const T* xs = x.data() + s * D;
      const T* kk = kernel.data() + k * D;
      for (std::int64_t d = 0; d < D; ++d) yt[d] += kk[d] * xs[d];
    }
  }
  return y;
}

template <typename T>
void dw_conv1d_backward(const DenseArray<T>& x, const DenseArray<T>& kernel,
                        const DenseArray<T>& gy, DenseArray<T>& gx, DenseArray<T>& gkernel) {
  const std::int64_t L = x.extent(0), D = x.extent(1), K = kernel.extent(0);
  if (!gx.same_shape(x)) gx = DenseArray<T>(x.shape());
  else gx.fill(T(0));
  for (std::int64_t t = 0; t < L; ++t) {
    const T* gyt = gy.data() + t * D;
    for (std::int64_t k = 0; k < K; ++k) {
      const std::int64_t s = t - K + 1 + k;
      if (s < 0) continue;
      const T* xs = x.data() + s * D;
      const T* kk = kernel.data() + k * D;
      T* gxs = gx.data() + s * D;
      T* gk = gkernel.data() + k * D;
      for (std::int64_t d = 0; d < D; ++d) {
        gxs[d] += kk[d] * gyt[d];
        gk[d] += xs[d] * gyt[d];
      }
    }
  }
}

// ------------------------------------------------------------------ misc

// Flips the first axis of a (L, D) array; used by the backward scan path.
template <typename T>
DenseArray<T> reverse_rows(const DenseArray<T>& x) {
  FETRACK_CHECK_DIM(x.ndim() == 2, "reverse_rows: rank-2 input required");
  const std::int64_t L = x.extent(0), D = x.extent(1);
  DenseArray<T> y({L, D});
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t d = 0; d < D; ++d) y[(L - 1 - t) * D + d] = x[t * D + d];
  return y;
}

template <typename T>
void add_inplace(DenseArray<T>& a, const DenseArray<T>& b) {
  FETRACK_CHECK_DIM(a.same_shape(b), "add: shape mismatch");
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <typename T>
void scale_inplace(DenseArray<T>& a, T s) {
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] *= s;
}

}  // namespace fetrack
