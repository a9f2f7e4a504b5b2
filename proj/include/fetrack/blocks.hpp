#pragma once

// Network building blocks around the selective scan:
//   - SsmDir: conv -> SiLU -> (B, C, delta) projections -> scan, one direction
//   - VimBlock: pre-norm, forward + reversed scans, shared SiLU gate, residual
//   - FusionBlock: per-modality scans whose outputs are summed and re-gated by
//     each modality's own gate, residual per branch
//   - PatchEmbed: non-overlapping patches -> linear -> learned positions
// Every forward has a ctx struct holding exactly the intermediates its
// hand-written backward needs. Parameter gradients accumulate; call sites
// zero them between steps.

#include <limits>
#include <string>
#include <utility>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"
#include "fetrack/ops.hpp"
#include "fetrack/ssm.hpp"

namespace fetrack {

template <typename T>
struct Param {
  DenseArray<T> value;
  DenseArray<T> grad;

  void init_shape(Shape s) {
    value = DenseArray<T>(s);
    grad = DenseArray<T>(std::move(s));
  }
  void zero_grad() { grad.fill(T(0)); }
};

// ------------------------------------------------------------ column slices

// Copies columns [c0, c1) of a (L, W) matrix into a fresh (L, c1-c0) array.
template <typename T>
DenseArray<T> take_cols(const DenseArray<T>& x, std::int64_t c0, std::int64_t c1) {
  const std::int64_t L = x.extent(0), n = c1 - c0;
  DenseArray<T> y({L, n});
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t j = 0; j < n; ++j) y.at2(t, j) = x.at2(t, c0 + j);
  return y;
}

template <typename T>
void put_cols(DenseArray<T>& dst, const DenseArray<T>& src, std::int64_t c0) {
  const std::int64_t L = src.extent(0), n = src.extent(1);
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t j = 0; j < n; ++j) dst.at2(t, c0 + j) = src.at2(t, j);
}

// ------------------------------------------------------- one-direction SSM

// Parameters for one scan direction over E channels with N states and a
// rank-R bottleneck on the step-size path.
template <typename T>
struct SsmParams {
  Param<T> conv_kernel;  // (K, E) depthwise causal taps
  Param<T> proj_bcdt_w;  // (E, 2N + R)
  Param<T> proj_bcdt_b;  // (2N + R)
  Param<T> dt_w;         // (R, E)
  Param<T> dt_bias;      // (E)
  Param<T> A_log;        // (E, N); state matrix diag is -exp(A_log)
  Param<T> D_skip;       // (E) direct feed-through; empty when disabled

  std::int64_t state() const { return A_log.value.extent(1); }
  std::int64_t dt_rank() const { return dt_w.value.extent(0); }

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    fn(pre + ".conv_kernel", conv_kernel);
    fn(pre + ".proj_bcdt_w", proj_bcdt_w);
    fn(pre + ".proj_bcdt_b", proj_bcdt_b);
    fn(pre + ".dt_w", dt_w);
    fn(pre + ".dt_bias", dt_bias);
    fn(pre + ".A_log", A_log);
    if (!D_skip.value.empty()) fn(pre + ".D_skip", D_skip);
  }
};

template <typename T>
struct SsmCtx {
  DenseArray<T> x_in;      // (L, E) conv input
  DenseArray<T> conv_out;  // (L, E) pre-activation
  DenseArray<T> dtlr;      // (L, R) low-rank step features
  DenseArray<T> dt_pre;    // (L, E) pre-softplus
  ScanInputs<T> scan_in;   // x_prime = SiLU(conv_out), B_t, C_t, delta
};

// x (L, E) -> y (L, E)
template <typename T>
DenseArray<T> ssm_dir_forward(const SsmParams<T>& p, const DenseArray<T>& x, ZohMode mode,
                              SsmCtx<T>& ctx) {
  const std::int64_t N = p.state();
  ctx.x_in = x;
  ctx.conv_out = dw_conv1d(x, p.conv_kernel.value);
  ctx.scan_in.x_prime = silu(ctx.conv_out);

  DenseArray<T> bcdt = linear(ctx.scan_in.x_prime, p.proj_bcdt_w.value, p.proj_bcdt_b.value);
  ctx.scan_in.B_t = take_cols(bcdt, 0, N);
  ctx.scan_in.C_t = take_cols(bcdt, N, 2 * N);
  ctx.dtlr = take_cols(bcdt, 2 * N, bcdt.extent(1));

  ctx.dt_pre = linear(ctx.dtlr, p.dt_w.value, p.dt_bias.value);
  ctx.scan_in.delta = DenseArray<T>(ctx.dt_pre.shape());
  constexpr T dt_floor = std::numeric_limits<T>::min();  // keeps delta > 0 if softplus underflows
  for (std::int64_t i = 0; i < ctx.dt_pre.numel(); ++i)
    ctx.scan_in.delta[i] = std::max(softplus_s(ctx.dt_pre[i]), dt_floor);

  auto out = selective_scan(p.A_log.value, p.D_skip.value, ctx.scan_in, mode);
  return std::move(out.y);
}

// Accumulates parameter gradients; writes the input gradient to gx.
template <typename T>
void ssm_dir_backward(SsmParams<T>& p, const SsmCtx<T>& ctx, const DenseArray<T>& gy,
                      ZohMode mode, DenseArray<T>& gx) {
  const std::int64_t N = p.state(), R = p.dt_rank();
  const std::int64_t L = ctx.x_in.extent(0);

  ScanGrads<T> sg = selective_scan_backward(p.A_log.value, p.D_skip.value, ctx.scan_in, mode, gy);
  add_inplace(p.A_log.grad, sg.A_log);
  if (!p.D_skip.value.empty()) add_inplace(p.D_skip.grad, sg.D_skip);

  // delta = softplus(dt_pre)
  DenseArray<T> g_dt_pre(ctx.dt_pre.shape());
  for (std::int64_t i = 0; i < g_dt_pre.numel(); ++i)
    g_dt_pre[i] = sg.delta[i] * sigmoid_s(ctx.dt_pre[i]);

  DenseArray<T> g_dtlr;
  linear_backward(ctx.dtlr, p.dt_w.value, g_dt_pre, g_dtlr, p.dt_w.grad, p.dt_bias.grad);

  DenseArray<T> g_bcdt({L, 2 * N + R});
  put_cols(g_bcdt, sg.B_t, 0);
  put_cols(g_bcdt, sg.C_t, N);
  put_cols(g_bcdt, g_dtlr, 2 * N);

  DenseArray<T> g_xp;
  linear_backward(ctx.scan_in.x_prime, p.proj_bcdt_w.value, g_bcdt, g_xp, p.proj_bcdt_w.grad,
                  p.proj_bcdt_b.grad);
  add_inplace(g_xp, sg.x_prime);

  DenseArray<T> g_conv(ctx.conv_out.shape());
  for (std::int64_t i = 0; i < g_conv.numel(); ++i)
    g_conv[i] = g_xp[i] * silu_grad_s(ctx.conv_out[i]);

  dw_conv1d_backward(ctx.x_in, p.conv_kernel.value, g_conv, gx, p.conv_kernel.grad);
}

// ------------------------------------------------------- bidirectional block

template <typename T>
struct VimBlockParams {
  Param<T> norm_scale, norm_bias;  // (C)
  Param<T> proj_z_w, proj_z_b;     // (C, E), (E)
  Param<T> proj_x_w, proj_x_b;     // (C, E), (E)
  SsmParams<T> fwd, bwd;
  Param<T> proj_out_w, proj_out_b;  // (E, C), (C)

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    fn(pre + ".norm_scale", norm_scale);
    fn(pre + ".norm_bias", norm_bias);
    fn(pre + ".proj_z_w", proj_z_w);
    fn(pre + ".proj_z_b", proj_z_b);
    fn(pre + ".proj_x_w", proj_x_w);
    fn(pre + ".proj_x_b", proj_x_b);
    fwd.visit(pre + ".fwd", fn);
    bwd.visit(pre + ".bwd", fn);
    fn(pre + ".proj_out_w", proj_out_w);
    fn(pre + ".proj_out_b", proj_out_b);
  }
};

template <typename T>
struct VimCtx {
  DenseArray<T> h_in;  // (L, C)
  LayerNormCtx<T> ln;
  DenseArray<T> u;      // (L, C) normalized
  DenseArray<T> z;      // (L, E) gate path
  DenseArray<T> x;      // (L, E) scan path
  SsmCtx<T> fwd, bwd;   // bwd works on reversed rows
  DenseArray<T> y_sum;  // (L, E) y_fwd + y_bwd, forward order
};

// tokens (L, C) -> tokens (L, C); both scan directions share one gate.
template <typename T>
DenseArray<T> vim_block_forward(const VimBlockParams<T>& p, const DenseArray<T>& h, ZohMode mode,
                                VimCtx<T>& ctx) {
  ctx.h_in = h;
  ctx.u = layer_norm(h, p.norm_scale.value, p.norm_bias.value, T(1e-5), &ctx.ln);
  ctx.z = linear(ctx.u, p.proj_z_w.value, p.proj_z_b.value);
  ctx.x = linear(ctx.u, p.proj_x_w.value, p.proj_x_b.value);

  DenseArray<T> y_f = ssm_dir_forward(p.fwd, ctx.x, mode, ctx.fwd);
  DenseArray<T> xr = reverse_rows(ctx.x);
  DenseArray<T> y_b_rev = ssm_dir_forward(p.bwd, xr, mode, ctx.bwd);
  DenseArray<T> y_b = reverse_rows(y_b_rev);

  ctx.y_sum = std::move(y_f);
  add_inplace(ctx.y_sum, y_b);

  DenseArray<T> gated(ctx.y_sum.shape());
  for (std::int64_t i = 0; i < gated.numel(); ++i)
    gated[i] = ctx.y_sum[i] * silu_s(ctx.z[i]);

  DenseArray<T> out = linear(gated, p.proj_out_w.value, p.proj_out_b.value);
  add_inplace(out, h);
  return out;
}

template <typename T>
void vim_block_backward(VimBlockParams<T>& p, const VimCtx<T>& ctx, const DenseArray<T>& gout,
                        ZohMode mode, DenseArray<T>& gh) {
  // out = h + proj_out(gated)
  DenseArray<T> gated(ctx.y_sum.shape());
  for (std::int64_t i = 0; i < gated.numel(); ++i)
    gated[i] = ctx.y_sum[i] * silu_s(ctx.z[i]);
  DenseArray<T> g_gated;
  linear_backward(gated, p.proj_out_w.value, gout, g_gated, p.proj_out_w.grad, p.proj_out_b.grad);

  DenseArray<T> g_y_sum(ctx.y_sum.shape());
  DenseArray<T> g_z(ctx.z.shape());
  for (std::int64_t i = 0; i < g_y_sum.numel(); ++i) {
    g_y_sum[i] = g_gated[i] * silu_s(ctx.z[i]);
    g_z[i] = g_gated[i] * ctx.y_sum[i] * silu_grad_s(ctx.z[i]);
  }

  DenseArray<T> g_x_f;
  ssm_dir_backward(p.fwd, ctx.fwd, g_y_sum, mode, g_x_f);
  DenseArray<T> g_y_b_rev = reverse_rows(g_y_sum);
  DenseArray<T> g_xr;
  ssm_dir_backward(p.bwd, ctx.bwd, g_y_b_rev, mode, g_xr);
  DenseArray<T> g_x_b = reverse_rows(g_xr);
  add_inplace(g_x_f, g_x_b);

  DenseArray<T> g_u;
  linear_backward(ctx.u, p.proj_x_w.value, g_x_f, g_u, p.proj_x_w.grad, p.proj_x_b.grad);
  DenseArray<T> g_u2;
  linear_backward(ctx.u, p.proj_z_w.value, g_z, g_u2, p.proj_z_w.grad, p.proj_z_b.grad);
  add_inplace(g_u, g_u2);

  layer_norm_backward(ctx.h_in, p.norm_scale.value, ctx.ln, g_u, gh, p.norm_scale.grad,
                      p.norm_bias.grad);
  add_inplace(gh, gout);  // residual branch
}

// ----------------------------------------------------------- fusion block

// Two token streams exchange state through their scans: each branch's output
// gate modulates the SUM of both scan outputs, so information crosses
// modalities while each branch keeps its own residual.
template <typename T>
struct FusionParams {
  Param<T> norm_scale_a, norm_bias_a;  // (C) stream a
  Param<T> norm_scale_b, norm_bias_b;  // (C) stream b
  Param<T> proj_z_a_w, proj_z_a_b;     // (C, E), (E)
  Param<T> proj_x_a_w, proj_x_a_b;
  Param<T> proj_z_b_w, proj_z_b_b;
  Param<T> proj_x_b_w, proj_x_b_b;
  SsmParams<T> ssm_a, ssm_b;          // one direction each
  Param<T> out_a_w, out_a_b;          // (E, C), (C)
  Param<T> out_b_w, out_b_b;

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    fn(pre + ".norm_scale_a", norm_scale_a);
    fn(pre + ".norm_bias_a", norm_bias_a);
    fn(pre + ".norm_scale_b", norm_scale_b);
    fn(pre + ".norm_bias_b", norm_bias_b);
    fn(pre + ".proj_z_a_w", proj_z_a_w);
    fn(pre + ".proj_z_a_b", proj_z_a_b);
    fn(pre + ".proj_x_a_w", proj_x_a_w);
    fn(pre + ".proj_x_a_b", proj_x_a_b);
    fn(pre + ".proj_z_b_w", proj_z_b_w);
    fn(pre + ".proj_z_b_b", proj_z_b_b);
    fn(pre + ".proj_x_b_w", proj_x_b_w);
    fn(pre + ".proj_x_b_b", proj_x_b_b);
    ssm_a.visit(pre + ".ssm_a", fn);
    ssm_b.visit(pre + ".ssm_b", fn);
    fn(pre + ".out_a_w", out_a_w);
    fn(pre + ".out_a_b", out_a_b);
    fn(pre + ".out_b_w", out_b_w);
    fn(pre + ".out_b_b", out_b_b);
  }
};

template <typename T>
struct FusionCtx {
  DenseArray<T> fa_in, fb_in;  // (L, C)
  LayerNormCtx<T> ln_a, ln_b;
  DenseArray<T> ua, ub;    // (L, C)
  DenseArray<T> za, zb;    // (L, E)
  DenseArray<T> xa, xb;    // (L, E)
  SsmCtx<T> ssm_a, ssm_b;
  DenseArray<T> y_sum;     // (L, E) y_a + y_b
};

template <typename T>
std::pair<DenseArray<T>, DenseArray<T>> fusion_forward(const FusionParams<T>& p,
                                                       const DenseArray<T>& fa,
                                                       const DenseArray<T>& fb, ZohMode mode,
                                                       FusionCtx<T>& ctx) {
  ctx.fa_in = fa;
  ctx.fb_in = fb;
  ctx.ua = layer_norm(fa, p.norm_scale_a.value, p.norm_bias_a.value, T(1e-5), &ctx.ln_a);
  ctx.ub = layer_norm(fb, p.norm_scale_b.value, p.norm_bias_b.value, T(1e-5), &ctx.ln_b);
  ctx.za = linear(ctx.ua, p.proj_z_a_w.value, p.proj_z_a_b.value);
  ctx.xa = linear(ctx.ua, p.proj_x_a_w.value, p.proj_x_a_b.value);
  ctx.zb = linear(ctx.ub, p.proj_z_b_w.value, p.proj_z_b_b.value);
  ctx.xb = linear(ctx.ub, p.proj_x_b_w.value, p.proj_x_b_b.value);

  DenseArray<T> ya = ssm_dir_forward(p.ssm_a, ctx.xa, mode, ctx.ssm_a);
  DenseArray<T> yb = ssm_dir_forward(p.ssm_b, ctx.xb, mode, ctx.ssm_b);
  ctx.y_sum = std::move(ya);
  add_inplace(ctx.y_sum, yb);

  DenseArray<T> ga(ctx.y_sum.shape()), gb(ctx.y_sum.shape());
  for (std::int64_t i = 0; i < ctx.y_sum.numel(); ++i) {
    ga[i] = ctx.y_sum[i] * silu_s(ctx.za[i]);
    gb[i] = ctx.y_sum[i] * silu_s(ctx.zb[i]);
  }
  DenseArray<T> oa = linear(ga, p.out_a_w.value, p.out_a_b.value);
  DenseArray<T> ob = linear(gb, p.out_b_w.value, p.out_b_b.value);
  add_inplace(oa, fa);
  add_inplace(ob, fb);
  return {std::move(oa), std::move(ob)};
}

template <typename T>
void fusion_backward(FusionParams<T>& p, const FusionCtx<T>& ctx, const DenseArray<T>& goa,
                     const DenseArray<T>& gob, ZohMode mode, DenseArray<T>& gfa,
                     DenseArray<T>& gfb) {
  DenseArray<T> ga(ctx.y_sum.shape()), gb(ctx.y_sum.shape());
  for (std::int64_t i = 0; i < ctx.y_sum.numel(); ++i) {
    ga[i] = ctx.y_sum[i] * silu_s(ctx.za[i]);
    gb[i] = ctx.y_sum[i] * silu_s(ctx.zb[i]);
  }
  DenseArray<T> g_ga, g_gb;
  linear_backward(ga, p.out_a_w.value, goa, g_ga, p.out_a_w.grad, p.out_a_b.grad);
  linear_backward(gb, p.out_b_w.value, gob, g_gb, p.out_b_w.grad, p.out_b_b.grad);

  DenseArray<T> g_y_sum(ctx.y_sum.shape());
  DenseArray<T> g_za(ctx.za.shape()), g_zb(ctx.zb.shape());
  for (std::int64_t i = 0; i < g_y_sum.numel(); ++i) {
    g_y_sum[i] = g_ga[i] * silu_s(ctx.za[i]) + g_gb[i] * silu_s(ctx.zb[i]);
    g_za[i] = g_ga[i] * ctx.y_sum[i] * silu_grad_s(ctx.za[i]);
    g_zb[i] = g_gb[i] * ctx.y_sum[i] * silu_grad_s(ctx.zb[i]);
  }

  DenseArray<T> g_xa, g_xb;
  ssm_dir_backward(p.ssm_a, ctx.ssm_a, g_y_sum, mode, g_xa);
  ssm_dir_backward(p.ssm_b, ctx.ssm_b, g_y_sum, mode, g_xb);

  DenseArray<T> g_ua, tmp;
  linear_backward(ctx.ua, p.proj_x_a_w.value, g_xa, g_ua, p.proj_x_a_w.grad, p.proj_x_a_b.grad);
  linear_backward(ctx.ua, p.proj_z_a_w.value, g_za, tmp, p.proj_z_a_w.grad, p.proj_z_a_b.grad);
  add_inplace(g_ua, tmp);
  DenseArray<T> g_ub;
  linear_backward(ctx.ub, p.proj_x_b_w.value, g_xb, g_ub, p.proj_x_b_w.grad, p.proj_x_b_b.grad);
  linear_backward(ctx.ub, p.proj_z_b_w.value, g_zb, tmp, p.proj_z_b_w.grad, p.proj_z_b_b.grad);
  add_inplace(g_ub, tmp);

  layer_norm_backward(ctx.fa_in, p.norm_scale_a.value, ctx.ln_a, g_ua, gfa, p.norm_scale_a.grad,
                      p.norm_bias_a.grad);
  layer_norm_backward(ctx.fb_in, p.norm_scale_b.value, ctx.ln_b, g_ub, gfb, p.norm_scale_b.grad,
                      p.norm_bias_b.grad);
  add_inplace(gfa, goa);
  add_inplace(gfb, gob);
}

// ------------------------------------------------------------- patch embed

// img (H, W, Cin) -> patch matrix (L, patch*patch*Cin) with
// L = (H/patch) * (W/patch). Patches are scanned row-major and pixels within
// a patch flatten row-major, matching the token order everywhere else.
template <typename T>
DenseArray<T> im2row(const DenseArray<T>& img, std::int64_t patch) {
  FETRACK_CHECK_DIM(img.ndim() == 3, "im2row: image must be (H, W, C)");
  const std::int64_t H = img.extent(0), W = img.extent(1), Cin = img.extent(2);
  FETRACK_CHECK_DIM(patch >= 1 && H % patch == 0 && W % patch == 0,
                    "im2row: image size not divisible by patch");
  const std::int64_t gh = H / patch, gw = W / patch;
  const std::int64_t pv = patch * patch * Cin;
  DenseArray<T> patches({gh * gw, pv});
  for (std::int64_t gy = 0; gy < gh; ++gy)
    for (std::int64_t gx = 0; gx < gw; ++gx) {
      T* row = patches.data() + (gy * gw + gx) * pv;
      for (std::int64_t py = 0; py < patch; ++py) {
        const T* src = img.data() + ((gy * patch + py) * W + gx * patch) * Cin;
        std::copy(src, src + patch * Cin, row + py * patch * Cin);
      }
    }
  return patches;
}

}  // namespace fetrack
