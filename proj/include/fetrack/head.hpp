#pragma once

// Center-point tracking head. Search-region tokens, reshaped to an (S, S, C)
// grid, feed three small conv towers:
//   score:  1 channel, peak marks the target center cell
//   offset: 2 channels, sub-cell position of the center within its cell
//   size:   2 channels, box width/height normalized to the search region
// Towers are K=3 conv -> batch norm -> ReLU stages with channel halving, then
// a 1x1 conv and a sigmoid. Batch norm uses per-forward batch statistics in
// training and frozen running statistics during tracking.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/blocks.hpp"
#include "fetrack/common.hpp"
#include "fetrack/ops.hpp"

namespace fetrack {

// --------------------------------------------------------------- 2d conv

// x (H, W, Ci) or (B, H, W, Ci), w (K, K, Ci, Co), K odd, same padding,
// stride 1. A leading batch dimension is carried through unchanged.
template <typename T>
DenseArray<T> conv2d(const DenseArray<T>& x, const DenseArray<T>& w, const DenseArray<T>& b) {
  FETRACK_CHECK_DIM((x.ndim() == 3 || x.ndim() == 4) && w.ndim() == 4,
                    "conv2d: x must be (H,W,Ci) or (B,H,W,Ci), w (K,K,Ci,Co)");
  const bool batched = x.ndim() == 4;
  const std::int64_t B = batched ? x.extent(0) : 1;
  const std::int64_t H = x.extent(batched + 0), W = x.extent(batched + 1), Ci = x.extent(batched + 2);
  const std::int64_t K = w.extent(0), Co = w.extent(3);
  FETRACK_CHECK_DIM(w.extent(1) == K && w.extent(2) == Ci, "conv2d: weight shape mismatch");
  FETRACK_CHECK_DIM(K % 2 == 1, "conv2d: kernel must be odd");
  const std::int64_t P = K / 2;
  DenseArray<T> y(batched ? Shape{B, H, W, Co} : Shape{H, W, Co});
  if (!b.empty()) {
    FETRACK_CHECK_DIM(b.numel() == Co, "conv2d: bias length mismatch");
    for (std::int64_t i = 0; i < B * H * W; ++i)
      for (std::int64_t c = 0; c < Co; ++c) y[i * Co + c] = b[c];
  }
  for (std::int64_t n = 0; n < B; ++n) {
    const T* xn = x.data() + n * H * W * Ci;
    T* yn = y.data() + n * H * W * Co;
    for (std::int64_t oy = 0; oy < H; ++oy)
      for (std::int64_t ky = 0; ky < K; ++ky) {
        const std::int64_t iy = oy + ky - P;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t ox = 0; ox < W; ++ox) {
          T* yo = yn + (oy * W + ox) * Co;
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t ix = ox + kx - P;
            if (ix < 0 || ix >= W) continue;
            const T* xi = xn + (iy * W + ix) * Ci;
            const T* wk = w.data() + (ky * K + kx) * Ci * Co;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const T v = xi[ci];
              if (v == T(0)) continue;
              const T* wc = wk + ci * Co;
              for (std::int64_t co = 0; co < Co; ++co) yo[co] += v * wc[co];
            }
          }
        }
      }
  }
  return y;
}

template <typename T>
void conv2d_backward(const DenseArray<T>& x, const DenseArray<T>& w, const DenseArray<T>& gy,
                     DenseArray<T>& gx, DenseArray<T>& gw, DenseArray<T>& gb) {
  const bool batched = x.ndim() == 4;
  const std::int64_t B = batched ? x.extent(0) : 1;
  const std::int64_t H = x.extent(batched + 0), W = x.extent(batched + 1), Ci = x.extent(batched + 2);
  const std::int64_t K = w.extent(0), Co = w.extent(3);
  const std::int64_t P = K / 2;
  if (!gx.same_shape(x)) gx = DenseArray<T>(x.shape());
  else gx.fill(T(0));
  for (std::int64_t n = 0; n < B; ++n) {
    const T* xn = x.data() + n * H * W * Ci;
    T* gxn = gx.data() + n * H * W * Ci;
    const T* gyn = gy.data() + n * H * W * Co;
    for (std::int64_t oy = 0; oy < H; ++oy)
      for (std::int64_t ky = 0; ky < K; ++ky) {
        const std::int64_t iy = oy + ky - P;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t ox = 0; ox < W; ++ox) {
          const T* gyo = gyn + (oy * W + ox) * Co;
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t ix = ox + kx - P;
            if (ix < 0 || ix >= W) continue;
            const T* xi = xn + (iy * W + ix) * Ci;
            T* gxi = gxn + (iy * W + ix) * Ci;
            const T* wk = w.data() + (ky * K + kx) * Ci * Co;
            T* gwk = gw.data() + (ky * K + kx) * Ci * Co;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const T* wc = wk + ci * Co;
              T* gwc = gwk + ci * Co;
              const T xv = xi[ci];
              T acc = T(0);
              for (std::int64_t co = 0; co < Co; ++co) {
                acc += wc[co] * gyo[co];
                gwc[co] += xv * gyo[co];
              }
              gxi[ci] += acc;
            }
          }
        }
      }
  }
  if (!gb.empty())
    for (std::int64_t i = 0; i < B * H * W; ++i)
      for (std::int64_t co = 0; co < Co; ++co) gb[co] += gy[i * Co + co];
}

// ------------------------------------------------------------- batch norm

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <typename T>
struct BnCtx {
  DenseArray<T> xhat;  // (H, W, C)
  DenseArray<T> rstd;  // (C)
};

// Training mode normalizes with this forward's spatial statistics and nudges
// the running estimates; tracking mode uses the frozen running estimates.
template <typename T>
DenseArray<T> bn_forward(const DenseArray<T>& x, const DenseArray<T>& scale,
                         const DenseArray<T>& bias, DenseArray<T>& run_mean,
                         DenseArray<T>& run_var, bool training, BnCtx<T>* ctx) {
  const std::int64_t C = x.shape().back();
  const std::int64_t M = x.numel() / C;
  DenseArray<T> y(x.shape());
  DenseArray<T> mean({C}), var({C});
  if (training) {
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t c = 0; c < C; ++c) mean[c] += x[i * C + c];
    for (std::int64_t c = 0; c < C; ++c) mean[c] /= T(M);
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t c = 0; c < C; ++c) {
        const T d = x[i * C + c] - mean[c];
        var[c] += d * d;
      }
    for (std::int64_t c = 0; c < C; ++c) var[c] /= T(M);
    for (std::int64_t c = 0; c < C; ++c) {
      run_mean[c] = T(1 - kBnMomentum) * run_mean[c] + T(kBnMomentum) * mean[c];
      run_var[c] = T(1 - kBnMomentum) * run_var[c] + T(kBnMomentum) * var[c];
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = run_mean[c];
      var[c] = run_var[c];
    }
  }
  DenseArray<T> rstd({C});
  for (std::int64_t c = 0; c < C; ++c) rstd[c] = T(1) / std::sqrt(var[c] + T(kBnEps));
  if (ctx) {
    ctx->xhat = DenseArray<T>(x.shape());
    ctx->rstd = rstd;
  }
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t c = 0; c < C; ++c) {
      const T xh = (x[i * C + c] - mean[c]) * rstd[c];
      if (ctx) ctx->xhat[i * C + c] = xh;
      y[i * C + c] = xh * scale[c] + bias[c];
    }
  return y;
}

// Backward through training-mode batch statistics.
template <typename T>
void bn_backward(const BnCtx<T>& ctx, const DenseArray<T>& scale, const DenseArray<T>& gy,
                 DenseArray<T>& gx, DenseArray<T>& gscale, DenseArray<T>& gbias) {
  const std::int64_t C = gy.shape().back();
  const std::int64_t M = gy.numel() / C;
  if (!gx.same_shape(gy)) gx = DenseArray<T>(gy.shape());
  DenseArray<T> sum_g({C}), sum_gx({C});
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t c = 0; c < C; ++c) {
      const T g = gy[i * C + c] * scale[c];
      sum_g[c] += g;
      sum_gx[c] += g * ctx.xhat[i * C + c];
      gscale[c] += gy[i * C + c] * ctx.xhat[i * C + c];
      gbias[c] += gy[i * C + c];
    }
  const T inv_m = T(1) / T(M);
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t c = 0; c < C; ++c) {
      const T g = gy[i * C + c] * scale[c];
      gx[i * C + c] =
          ctx.rstd[c] * (g - sum_g[c] * inv_m - ctx.xhat[i * C + c] * sum_gx[c] * inv_m);
    }
}

// ------------------------------------------------------------- head towers

template <typename T>
struct ConvBnLayer {
  Param<T> w;                    // (3, 3, Ci, Co), no conv bias (norm absorbs it)
  Param<T> bn_scale, bn_bias;    // (Co)
  DenseArray<T> run_mean, run_var;  // (Co) frozen statistics, not trained

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    fn(pre + ".w", w);
    fn(pre + ".bn_scale", bn_scale);
    fn(pre + ".bn_bias", bn_bias);
  }
};

template <typename T>
struct HeadBranch {
  std::vector<ConvBnLayer<T>> stages;
  Param<T> final_w;  // (1, 1, Clast, out)
  Param<T> final_b;  // (out)

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].visit(pre + ".stage" + std::to_string(i), fn);
    fn(pre + ".final_w", final_w);
    fn(pre + ".final_b", final_b);
  }
};

template <typename T>
struct HeadParams {
  HeadBranch<T> score;   // 1 channel
  HeadBranch<T> offset;  // 2 channels
  HeadBranch<T> size;    // 2 channels

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    score.visit(pre + ".score", fn);
    offset.visit(pre + ".offset", fn);
    size.visit(pre + ".size", fn);
  }
};

template <typename T>
struct ConvBnCtx {
  DenseArray<T> in;    // conv input
  DenseArray<T> conv;  // unused by backward but kept for shape clarity
  BnCtx<T> bn;
  DenseArray<T> out;   // post-ReLU, next stage's input
};

template <typename T>
struct BranchCtx {
  std::vector<ConvBnCtx<T>> stages;
  DenseArray<T> final_in;
  DenseArray<T> out;  // post-sigmoid (S, S, out)
};

template <typename T>
struct HeadCtx {
  BranchCtx<T> score, offset, size;
};

template <typename T>
DenseArray<T> branch_forward(HeadBranch<T>& p, const DenseArray<T>& x, bool training,
                             BranchCtx<T>& ctx) {
  ctx.stages.resize(p.stages.size());
  DenseArray<T> cur = x;
  DenseArray<T> no_bias;
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    auto& st = p.stages[i];
    auto& sc = ctx.stages[i];
    sc.in = cur;
    DenseArray<T> c = conv2d(cur, st.w.value, no_bias);
    DenseArray<T> n = bn_forward(c, st.bn_scale.value, st.bn_bias.value, st.run_mean, st.run_var,
                                 training, training ? &sc.bn : nullptr);
    sc.conv = std::move(c);
    for (std::int64_t j = 0; j < n.numel(); ++j)
      if (n[j] < T(0)) n[j] = T(0);
    sc.out = std::move(n);
    cur = sc.out;
  }
  ctx.final_in = cur;
  DenseArray<T> z = conv2d(cur, p.final_w.value, p.final_b.value);
  ctx.out = sigmoid(z);
  return ctx.out;
}

// g_out is the gradient at the post-sigmoid map.
template <typename T>
void branch_backward(HeadBranch<T>& p, const BranchCtx<T>& ctx, const DenseArray<T>& g_out,
                     DenseArray<T>& gx) {
  // sigmoid'(z) = out * (1 - out)
  DenseArray<T> gz(g_out.shape());
  for (std::int64_t i = 0; i < gz.numel(); ++i)
    gz[i] = g_out[i] * ctx.out[i] * (T(1) - ctx.out[i]);

  DenseArray<T> g_cur;
  DenseArray<T> gb_none;
  conv2d_backward(ctx.final_in, p.final_w.value, gz, g_cur, p.final_w.grad, p.final_b.grad);

  for (std::int64_t i = static_cast<std::int64_t>(p.stages.size()) - 1; i >= 0; --i) {
    auto& st = p.stages[static_cast<std::size_t>(i)];
    const auto& sc = ctx.stages[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < g_cur.numel(); ++j)
      if (sc.out[j] <= T(0)) g_cur[j] = T(0);  // ReLU mask
    DenseArray<T> g_conv;
    bn_backward(sc.bn, st.bn_scale.value, g_cur, g_conv, st.bn_scale.grad, st.bn_bias.grad);
    DenseArray<T> g_in;
    conv2d_backward(sc.in, st.w.value, g_conv, g_in, st.w.grad, gb_none);
    g_cur = std::move(g_in);
  }
  gx = std::move(g_cur);
}

template <typename T>
struct HeadOut {
  DenseArray<T> score;   // (S, S, 1)
  DenseArray<T> offset;  // (S, S, 2)
  DenseArray<T> size;    // (S, S, 2)
};

// One sample's (S, S, c) maps out of a batched (B, S, S, c) head output.
template <typename T>
HeadOut<T> slice_maps(const HeadOut<T>& maps, std::int64_t n) {
  auto slice = [n](const DenseArray<T>& m) {
    FETRACK_CHECK_DIM(m.ndim() == 4, "slice_maps: maps must be batched");
    DenseArray<T> y({m.extent(1), m.extent(2), m.extent(3)});
    std::copy(m.data() + n * y.numel(), m.data() + (n + 1) * y.numel(), y.data());
    return y;
  };
  HeadOut<T> out;
  out.score = slice(maps.score);
  out.offset = slice(maps.offset);
  out.size = slice(maps.size);
  return out;
}

// grid (S, S, C) or (B, S, S, C) -> three sigmoid maps with the same leading
// shape. A batched grid makes the normalization statistics per batch.
template <typename T>
HeadOut<T> head_forward(HeadParams<T>& p, const DenseArray<T>& grid, bool training,
                        HeadCtx<T>& ctx) {
  HeadOut<T> out;
  out.score = branch_forward(p.score, grid, training, ctx.score);
  out.offset = branch_forward(p.offset, grid, training, ctx.offset);
  out.size = branch_forward(p.size, grid, training, ctx.size);
  return out;
}

template <typename T>
void head_backward(HeadParams<T>& p, const HeadCtx<T>& ctx, const DenseArray<T>& g_score,
                   const DenseArray<T>& g_offset, const DenseArray<T>& g_size,
                   DenseArray<T>& g_grid) {
  DenseArray<T> g1, g2;
  branch_backward(p.score, ctx.score, g_score, g_grid);
  branch_backward(p.offset, ctx.offset, g_offset, g1);
  branch_backward(p.size, ctx.size, g_size, g2);
  add_inplace(g_grid, g1);
  add_inplace(g_grid, g2);
}

// ------------------------------------------------------- decode and target

struct BoxF {
  double cx = 0, cy = 0, w = 0, h = 0;  // normalized to [0, 1]
};

// Raised-cosine taper over the score grid, peaked at the center; used to bias
// the peak search toward the previous target location.
inline DenseArray<double> cosine_window(std::int64_t S) {
  DenseArray<double> w({S, S, 1});
  auto taper = [S](std::int64_t i) {
    if (S == 1) return 1.0;
    return 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * double(i) / double(S - 1));
  };
  for (std::int64_t i = 0; i < S; ++i)
    for (std::int64_t j = 0; j < S; ++j) w.at3(i, j, 0) = taper(i) * taper(j);
  return w;
}

// Peak cell (ties resolve to the smallest row-major index) plus the predicted
// sub-cell offset and size at that cell. A window, when given, multiplies the
// score for the peak search only; offsets and sizes still come from the raw
// maps.
template <typename T>
BoxF decode_bbox(const HeadOut<T>& maps, const DenseArray<double>* window = nullptr) {
  const std::int64_t S = maps.score.extent(0);
  if (window)
    FETRACK_CHECK_DIM(window->extent(0) == S && window->extent(1) == S,
                      "decode_bbox: window shape mismatch");
  auto weighted = [&](std::int64_t i, std::int64_t j) {
    const double v = static_cast<double>(maps.score.at3(i, j, 0));
    return window ? v * window->at3(i, j, 0) : v;
  };
  std::int64_t bi = 0, bj = 0;
  double best = weighted(0, 0);
  for (std::int64_t i = 0; i < S; ++i)
    for (std::int64_t j = 0; j < S; ++j)
      if (weighted(i, j) > best) {
        best = weighted(i, j);
        bi = i;
        bj = j;
      }
  BoxF b;
  b.cx = (static_cast<double>(bj) + static_cast<double>(maps.offset.at3(bi, bj, 0))) /
         static_cast<double>(S);
  b.cy = (static_cast<double>(bi) + static_cast<double>(maps.offset.at3(bi, bj, 1))) /
         static_cast<double>(S);
  b.w = maps.size.at3(bi, bj, 0);
  b.h = maps.size.at3(bi, bj, 1);
  return b;
}

// Gaussian score target: value exp(-((i-ci)^2 + (j-cj)^2) / (2 sigma^2)) with
// an exact 1 at the center cell; sigma scales with the box but never collapses
// below one cell.
template <typename T>
DenseArray<T> make_cls_target(const BoxF& gt, std::int64_t S) {
  auto clamp_cell = [S](double v) {
    std::int64_t c = static_cast<std::int64_t>(std::floor(v * static_cast<double>(S)));
    if (c < 0) c = 0;
    if (c >= S) c = S - 1;
    return c;
  };
  const std::int64_t ci = clamp_cell(gt.cy), cj = clamp_cell(gt.cx);
  const double sigma = std::max(1.0, static_cast<double>(S) * std::min(gt.w, gt.h) / 6.0);
  DenseArray<T> t({S, S, 1});
  for (std::int64_t i = 0; i < S; ++i)
    for (std::int64_t j = 0; j < S; ++j) {
      const double d2 = static_cast<double>((i - ci) * (i - ci) + (j - cj) * (j - cj));
      t.at3(i, j, 0) = static_cast<T>(std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  t.at3(ci, cj, 0) = T(1);
  return t;
}

}  // namespace fetrack
