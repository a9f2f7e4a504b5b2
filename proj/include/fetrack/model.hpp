#pragma once

// Full tracker: per-modality token backbones (patch embed + stacked
// bidirectional scan blocks over the concatenated template+search sequence),
// an optional cross-modal fusion block, and the center-point head on the
// search-region tokens. Single-modality configurations build one backbone and
// feed the head directly; the fused configuration concatenates both fused
// streams channel-wise.

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "fetrack/blocks.hpp"
#include "fetrack/checkpoint.hpp"
#include "fetrack/config.hpp"
#include "fetrack/head.hpp"
#include "fetrack/rng.hpp"

namespace fetrack {

template <typename T>
DenseArray<T> concat_rows(const DenseArray<T>& a, const DenseArray<T>& b) {
  FETRACK_CHECK_DIM(a.ndim() == 2 && b.ndim() == 2 && a.extent(1) == b.extent(1),
                    "concat_rows: column mismatch");
  DenseArray<T> y({a.extent(0) + b.extent(0), a.extent(1)});
  std::copy(a.data(), a.data() + a.numel(), y.data());
  std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
  return y;
}

template <typename T>
DenseArray<T> take_rows(const DenseArray<T>& x, std::int64_t r0, std::int64_t r1) {
  const std::int64_t W = x.extent(1);
  DenseArray<T> y({r1 - r0, W});
  std::copy(x.data() + r0 * W, x.data() + r1 * W, y.data());
  return y;
}

// Patch projection shared by the template and search crops of one modality;
// each crop keeps its own learned position table.
template <typename T>
struct EmbedParams {
  Param<T> w;  // (patch*patch*Cin, C)
  Param<T> b;  // (C)
  Param<T> pos_t, pos_s;

  template <typename Fn>
  void visit(const std::string& pre, Fn&& fn) {
    fn(pre + ".w", w);
    fn(pre + ".b", b);
    fn(pre + ".pos_t", pos_t);
    fn(pre + ".pos_s", pos_s);
  }
};

template <typename T>
struct SampleInput {
  DenseArray<T> rgb_t, rgb_s;  // (Ht, Wt, 3), (Hs, Ws, 3); empty unless modality uses frames
  DenseArray<T> evt_t, evt_s;  // (Ht, Wt, 3); empty unless modality uses events
};

template <typename T>
struct BackboneCtx {
  DenseArray<T> patches_t, patches_s;
  std::vector<VimCtx<T>> blocks;
  DenseArray<T> out;  // (L, C)
};

template <typename T>
struct ModelCtx {
  BackboneCtx<T> rgb, evt;
  FusionCtx<T> fusion;
  DenseArray<T> grid;  // (S, S, head channels)
  HeadCtx<T> head;
};

// State for a batched training forward: backbones and fusion run per sample,
// the head runs once on the stacked grids. The per-sample head ctxs are
// unused; ctx.head covers the whole batch.
template <typename T>
struct BatchCtx {
  std::vector<ModelCtx<T>> samples;
  DenseArray<T> grid;  // (B, S, S, head channels)
  HeadCtx<T> head;
};

template <typename T>
class TrackerModel {
 public:
  RunConfig cfg;
  EmbedParams<T> embed_rgb, embed_evt;
  std::vector<VimBlockParams<T>> blocks_rgb, blocks_evt;
  FusionParams<T> fusion;
  HeadParams<T> head;

  explicit TrackerModel(const RunConfig& c) : cfg(c) {
    cfg.validate();
    const std::int64_t C = cfg.channels, E = expand_dim(), N = cfg.state;
    const std::int64_t K = cfg.conv_width, R = cfg.dt_rank_effective();
    if (has_rgb()) {
      alloc_embed(embed_rgb, 3);
      blocks_rgb.resize(static_cast<std::size_t>(cfg.depth));
      for (auto& b : blocks_rgb) alloc_vim(b, C, E, N, K, R);
    }
    if (has_event()) {
      alloc_embed(embed_evt, 3);  // event frames are neutral-gray encoded, replicated to 3 channels
      blocks_evt.resize(static_cast<std::size_t>(cfg.depth));
      for (auto& b : blocks_evt) alloc_vim(b, C, E, N, K, R);
    }
    if (fused()) alloc_fusion(C, E, N, K, R);
    alloc_head();
  }

  bool has_rgb() const { return cfg.modality_mode() != Modality::event; }
  bool has_event() const { return cfg.modality_mode() != Modality::rgb; }
  bool fused() const { return cfg.modality_mode() == Modality::fused; }
  std::int64_t expand_dim() const { return cfg.expand * cfg.channels; }
  std::int64_t tokens_template() const {
    const std::int64_t g = cfg.template_size / cfg.patch;
    return g * g;
  }
  std::int64_t tokens_search() const {
    const std::int64_t g = cfg.score_cells();
    return g * g;
  }
  std::int64_t head_channels() const { return fused() ? 2 * cfg.channels : cfg.channels; }

  template <typename Fn>
  void visit(Fn&& fn) {
    if (has_rgb()) {
      embed_rgb.visit("rgb.embed", fn);
      for (std::size_t i = 0; i < blocks_rgb.size(); ++i)
        blocks_rgb[i].visit("rgb.block" + std::to_string(i), fn);
    }
    if (has_event()) {
      embed_evt.visit("event.embed", fn);
      for (std::size_t i = 0; i < blocks_evt.size(); ++i)
        blocks_evt[i].visit("event.block" + std::to_string(i), fn);
    }
    if (fused()) fusion.visit("fusion", fn);
    head.visit("head", fn);
  }

  // Non-trained state: batch-norm running statistics.
  template <typename Fn>
  void visit_state(Fn&& fn) {
    auto branch = [&](HeadBranch<T>& b, const std::string& pre) {
      for (std::size_t i = 0; i < b.stages.size(); ++i) {
        fn(pre + ".stage" + std::to_string(i) + ".run_mean", b.stages[i].run_mean);
        fn(pre + ".stage" + std::to_string(i) + ".run_var", b.stages[i].run_var);
      }
    };
    branch(head.score, "head.score");
    branch(head.offset, "head.offset");
    branch(head.size, "head.size");
  }

  void zero_grads() {
    visit([](const std::string&, Param<T>& p) { p.zero_grad(); });
  }

  std::int64_t count_params() {
    std::int64_t n = 0;
    visit([&n](const std::string&, Param<T>& p) { n += p.value.numel(); });
    return n;
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed, 0x7061726d);  // independent stream for parameter draws
    if (has_rgb()) {
      init_embed(embed_rgb, rng);
      for (auto& b : blocks_rgb) init_vim(b, rng);
    }
    if (has_event()) {
      init_embed(embed_evt, rng);
      for (auto& b : blocks_evt) init_vim(b, rng);
    }
    if (fused()) init_fusion(rng);
    init_head(rng);
  }

  HeadOut<T> forward(const SampleInput<T>& s, bool training, ModelCtx<T>& ctx) {
    grid_forward(s, ctx);
    return head_forward(head, ctx.grid, training, ctx.head);
  }

  void backward(ModelCtx<T>& ctx, const DenseArray<T>& g_score, const DenseArray<T>& g_offset,
                const DenseArray<T>& g_size) {
    DenseArray<T> g_grid;
    head_backward(head, ctx.head, g_score, g_offset, g_size, g_grid);
    grid_backward(ctx, g_grid);
  }

  // Training forward over a whole batch. Backbones and fusion run per sample;
  // the head sees the stacked (B, S, S, C) grids in one pass, so its
  // normalization statistics are batch statistics, matching what the frozen
  // running estimates later approximate during tracking. Returns batched
  // (B, S, S, c) maps; slice_maps() extracts one sample's view.
  HeadOut<T> forward_batch(const std::vector<SampleInput<T>>& batch, BatchCtx<T>& ctx) {
    const std::int64_t B = static_cast<std::int64_t>(batch.size());
    FETRACK_CHECK_VALUE(B >= 1, "forward_batch: empty batch");
    const std::int64_t S = cfg.score_cells(), Ch = head_channels();
    ctx.samples.resize(batch.size());
    ctx.grid = DenseArray<T>({B, S, S, Ch});
    for (std::int64_t n = 0; n < B; ++n) {
      ModelCtx<T>& sc = ctx.samples[static_cast<std::size_t>(n)];
      grid_forward(batch[static_cast<std::size_t>(n)], sc);
      std::copy(sc.grid.data(), sc.grid.data() + sc.grid.numel(),
                ctx.grid.data() + n * S * S * Ch);
    }
    return head_forward(head, ctx.grid, true, ctx.head);
  }

  // g_* are gradients at the batched maps, summed over the batch's losses.
  void backward_batch(BatchCtx<T>& ctx, const DenseArray<T>& g_score,
                      const DenseArray<T>& g_offset, const DenseArray<T>& g_size) {
    DenseArray<T> g_grid;
    head_backward(head, ctx.head, g_score, g_offset, g_size, g_grid);
    const std::int64_t B = ctx.grid.extent(0), S = cfg.score_cells(), Ch = head_channels();
    for (std::int64_t n = 0; n < B; ++n) {
      DenseArray<T> g({S, S, Ch});
      std::copy(g_grid.data() + n * S * S * Ch, g_grid.data() + (n + 1) * S * S * Ch, g.data());
      grid_backward(ctx.samples[static_cast<std::size_t>(n)], g);
    }
  }

  void save(const std::string& path) {
    Checkpoint ck;
    visit([&ck](const std::string& name, Param<T>& p) { ck.set(name, p.value); });
    visit_state([&ck](const std::string& name, DenseArray<T>& a) { ck.set(name, a); });
    ck.set_scalar("cfg.channels", static_cast<double>(cfg.channels));
    ck.set_scalar("cfg.depth", static_cast<double>(cfg.depth));
    ck.set_scalar("cfg.state", static_cast<double>(cfg.state));
    ck.set_scalar("cfg.conv_width", static_cast<double>(cfg.conv_width));
    ck.set_scalar("cfg.dt_rank", static_cast<double>(cfg.dt_rank_effective()));
    ck.set_scalar("cfg.expand", static_cast<double>(cfg.expand));
    ck.set_scalar("cfg.patch", static_cast<double>(cfg.patch));
    ck.set_scalar("cfg.template_size", static_cast<double>(cfg.template_size));
    ck.set_scalar("cfg.search_size", static_cast<double>(cfg.search_size));
    ck.set_scalar("cfg.zoh", cfg.zoh_mode() == ZohModeCfg::exact ? 0.0 : 1.0);
    ck.set_scalar("cfg.d_skip", cfg.d_skip ? 1.0 : 0.0);
    const Modality m = cfg.modality_mode();
    ck.set_scalar("cfg.modality", m == Modality::fused ? 0.0 : (m == Modality::rgb ? 1.0 : 2.0));
    ck.write(path);
  }

  static TrackerModel<T> load(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path);
    RunConfig c;
    c.channels = static_cast<std::int64_t>(ck.scalar("cfg.channels"));
    c.depth = static_cast<std::int64_t>(ck.scalar("cfg.depth"));
    c.state = static_cast<std::int64_t>(ck.scalar("cfg.state"));
    c.conv_width = static_cast<std::int64_t>(ck.scalar("cfg.conv_width"));
    c.dt_rank = static_cast<std::int64_t>(ck.scalar("cfg.dt_rank"));
    c.expand = static_cast<std::int64_t>(ck.scalar("cfg.expand"));
    c.patch = static_cast<std::int64_t>(ck.scalar("cfg.patch"));
    c.template_size = static_cast<std::int64_t>(ck.scalar("cfg.template_size"));
    c.search_size = static_cast<std::int64_t>(ck.scalar("cfg.search_size"));
    c.zoh = ck.scalar("cfg.zoh") == 0.0 ? "exact" : "simplified";
    c.d_skip = ck.scalar("cfg.d_skip") != 0.0;
    const double m = ck.scalar("cfg.modality");
    c.modality = m == 0.0 ? "fused" : (m == 1.0 ? "rgb" : "event");
    TrackerModel<T> model(c);
    model.visit([&ck](const std::string& name, Param<T>& p) {
      DenseArray<T> v = ck.get<T>(name);
      FETRACK_CHECK_DIM(v.same_shape(p.value), "checkpoint: shape mismatch for " + name);
      p.value = std::move(v);
    });
    model.visit_state([&ck](const std::string& name, DenseArray<T>& a) {
      DenseArray<T> v = ck.get<T>(name);
      FETRACK_CHECK_DIM(v.same_shape(a), "checkpoint: shape mismatch for " + name);
      a = std::move(v);
    });
    return model;
  }

  ZohMode zoh_mode() const {
    return cfg.zoh_mode() == ZohModeCfg::exact ? ZohMode::exact : ZohMode::simplified;
  }

 private:
  void alloc_embed(EmbedParams<T>& e, std::int64_t cin) {
    const std::int64_t pv = cfg.patch * cfg.patch * cin;
    e.w.init_shape({pv, cfg.channels});
    e.b.init_shape({cfg.channels});
    e.pos_t.init_shape({tokens_template(), cfg.channels});
    e.pos_s.init_shape({tokens_search(), cfg.channels});
  }

  static void alloc_ssm(SsmParams<T>& s, std::int64_t E, std::int64_t N, std::int64_t K,
                        std::int64_t R, bool with_skip) {
    s.conv_kernel.init_shape({K, E});
    s.proj_bcdt_w.init_shape({E, 2 * N + R});
    s.proj_bcdt_b.init_shape({2 * N + R});
    s.dt_w.init_shape({R, E});
    s.dt_bias.init_shape({E});
    s.A_log.init_shape({E, N});
    if (with_skip) s.D_skip.init_shape({E});
  }

  void alloc_vim(VimBlockParams<T>& b, std::int64_t C, std::int64_t E, std::int64_t N,
                 std::int64_t K, std::int64_t R) {
    b.norm_scale.init_shape({C});
    b.norm_bias.init_shape({C});
    b.proj_z_w.init_shape({C, E});
    b.proj_z_b.init_shape({E});
    b.proj_x_w.init_shape({C, E});
    b.proj_x_b.init_shape({E});
    alloc_ssm(b.fwd, E, N, K, R, cfg.d_skip);
    alloc_ssm(b.bwd, E, N, K, R, cfg.d_skip);
    b.proj_out_w.init_shape({E, C});
    b.proj_out_b.init_shape({C});
  }

  void alloc_fusion(std::int64_t C, std::int64_t E, std::int64_t N, std::int64_t K,
                    std::int64_t R) {
    fusion.norm_scale_a.init_shape({C});
    fusion.norm_bias_a.init_shape({C});
    fusion.norm_scale_b.init_shape({C});
    fusion.norm_bias_b.init_shape({C});
    fusion.proj_z_a_w.init_shape({C, E});
    fusion.proj_z_a_b.init_shape({E});
    fusion.proj_x_a_w.init_shape({C, E});
    fusion.proj_x_a_b.init_shape({E});
    fusion.proj_z_b_w.init_shape({C, E});
    fusion.proj_z_b_b.init_shape({E});
    fusion.proj_x_b_w.init_shape({C, E});
    fusion.proj_x_b_b.init_shape({E});
    alloc_ssm(fusion.ssm_a, E, N, K, R, cfg.d_skip);
    alloc_ssm(fusion.ssm_b, E, N, K, R, cfg.d_skip);
    fusion.out_a_w.init_shape({E, C});
    fusion.out_a_b.init_shape({C});
    fusion.out_b_w.init_shape({E, C});
    fusion.out_b_b.init_shape({C});
  }

  void alloc_head() {
    auto branch = [&](HeadBranch<T>& b, std::int64_t out_ch) {
      b.stages.resize(4);
      std::int64_t c = head_channels();
      for (auto& st : b.stages) {
        const std::int64_t co = std::max<std::int64_t>(c / 2, 4);
        st.w.init_shape({3, 3, c, co});
        st.bn_scale.init_shape({co});
        st.bn_bias.init_shape({co});
        st.run_mean = DenseArray<T>({co});
        st.run_var = DenseArray<T>({co}, T(1));
        c = co;
      }
      b.final_w.init_shape({1, 1, c, out_ch});
      b.final_b.init_shape({out_ch});
    };
    branch(head.score, 1);
    branch(head.offset, 2);
    branch(head.size, 2);
  }

  static void gauss_fill(DenseArray<T>& a, Rng& rng, double std_dev) {
    for (std::int64_t i = 0; i < a.numel(); ++i)
      a[i] = static_cast<T>(rng.next_gaussian() * std_dev);
  }

  void init_embed(EmbedParams<T>& e, Rng& rng) {
    gauss_fill(e.w.value, rng, 0.02);
    e.b.value.fill(T(0));
    gauss_fill(e.pos_t.value, rng, 0.02);
    gauss_fill(e.pos_s.value, rng, 0.02);
  }

  void init_ssm(SsmParams<T>& s, Rng& rng) {
    const std::int64_t K = s.conv_kernel.value.extent(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(K));
    for (std::int64_t i = 0; i < s.conv_kernel.value.numel(); ++i)
      s.conv_kernel.value[i] = static_cast<T>(rng.next_uniform(-bound, bound));
    gauss_fill(s.proj_bcdt_w.value, rng, 0.02);
    s.proj_bcdt_b.value.fill(T(0));
    gauss_fill(s.dt_w.value, rng, 0.02);
    // softplus(dt_bias) lands log-uniformly in [1e-3, 1e-1]
    for (std::int64_t i = 0; i < s.dt_bias.value.numel(); ++i) {
      const double dt = std::exp(rng.next_uniform(std::log(1e-3), std::log(1e-1)));
      s.dt_bias.value[i] = static_cast<T>(std::log(std::expm1(dt)));
    }
    // state decay rates spread log-evenly over [1, N]
    const std::int64_t N = s.A_log.value.extent(1);
    for (std::int64_t d = 0; d < s.A_log.value.extent(0); ++d)
      for (std::int64_t n = 0; n < N; ++n)
        s.A_log.value.at2(d, n) =
            static_cast<T>(N == 1 ? 0.0
                                  : (static_cast<double>(n) / static_cast<double>(N - 1)) *
                                        std::log(static_cast<double>(N)));
    if (!s.D_skip.value.empty()) s.D_skip.value.fill(T(1));
  }

  void init_vim(VimBlockParams<T>& b, Rng& rng) {
    b.norm_scale.value.fill(T(1));
    b.norm_bias.value.fill(T(0));
    gauss_fill(b.proj_z_w.value, rng, 0.02);
    b.proj_z_b.value.fill(T(0));
    gauss_fill(b.proj_x_w.value, rng, 0.02);
    b.proj_x_b.value.fill(T(0));
    init_ssm(b.fwd, rng);
    init_ssm(b.bwd, rng);
    gauss_fill(b.proj_out_w.value, rng, 0.02);
    b.proj_out_b.value.fill(T(0));
  }

  void init_fusion(Rng& rng) {
    fusion.norm_scale_a.value.fill(T(1));
    fusion.norm_bias_a.value.fill(T(0));
    fusion.norm_scale_b.value.fill(T(1));
    fusion.norm_bias_b.value.fill(T(0));
    gauss_fill(fusion.proj_z_a_w.value, rng, 0.02);
    fusion.proj_z_a_b.value.fill(T(0));
    gauss_fill(fusion.proj_x_a_w.value, rng, 0.02);
    fusion.proj_x_a_b.value.fill(T(0));
    gauss_fill(fusion.proj_z_b_w.value, rng, 0.02);
    fusion.proj_z_b_b.value.fill(T(0));
    gauss_fill(fusion.proj_x_b_w.value, rng, 0.02);
    fusion.proj_x_b_b.value.fill(T(0));
    init_ssm(fusion.ssm_a, rng);
    init_ssm(fusion.ssm_b, rng);
    gauss_fill(fusion.out_a_w.value, rng, 0.02);
    fusion.out_a_b.value.fill(T(0));
    gauss_fill(fusion.out_b_w.value, rng, 0.02);
    fusion.out_b_b.value.fill(T(0));
  }

  void init_head(Rng& rng) {
    auto branch = [&](HeadBranch<T>& b, double final_bias) {
      for (auto& st : b.stages) {
        gauss_fill(st.w.value, rng, 0.02);
        st.bn_scale.value.fill(T(1));
        st.bn_bias.value.fill(T(0));
        st.run_mean.fill(T(0));
        st.run_var.fill(T(1));
      }
      gauss_fill(b.final_w.value, rng, 0.02);
      b.final_b.value.fill(static_cast<T>(final_bias));
    };
    branch(head.score, -4.59512);  // sigmoid prior of about 0.01 on the score map
    branch(head.offset, 0.0);
    branch(head.size, 0.0);
  }

  // Backbones plus fusion for one sample; leaves the (S, S, head channels)
  // search-region feature grid in ctx.grid.
  void grid_forward(const SampleInput<T>& s, ModelCtx<T>& ctx) {
    const ZohMode mode = zoh_mode();
    if (has_rgb()) backbone_forward(embed_rgb, blocks_rgb, s.rgb_t, s.rgb_s, mode, ctx.rgb);
    if (has_event()) backbone_forward(embed_evt, blocks_evt, s.evt_t, s.evt_s, mode, ctx.evt);

    const std::int64_t Lt = tokens_template(), S = cfg.score_cells(), C = cfg.channels;
    ctx.grid = DenseArray<T>({S, S, head_channels()});
    if (fused()) {
      auto [fr, fe] = fusion_forward(fusion, ctx.rgb.out, ctx.evt.out, mode, ctx.fusion);
      for (std::int64_t i = 0; i < S * S; ++i)
        for (std::int64_t c = 0; c < C; ++c) {
          ctx.grid[i * 2 * C + c] = fr.at2(Lt + i, c);
          ctx.grid[i * 2 * C + C + c] = fe.at2(Lt + i, c);
        }
    } else {
      const DenseArray<T>& out = has_rgb() ? ctx.rgb.out : ctx.evt.out;
      for (std::int64_t i = 0; i < S * S; ++i)
        for (std::int64_t c = 0; c < C; ++c) ctx.grid[i * C + c] = out.at2(Lt + i, c);
    }
  }

  void grid_backward(ModelCtx<T>& ctx, const DenseArray<T>& g_grid) {
    const ZohMode mode = zoh_mode();
    const std::int64_t Lt = tokens_template(), S = cfg.score_cells(), C = cfg.channels;
    const std::int64_t L = Lt + S * S;
    if (fused()) {
      DenseArray<T> g_fr({L, C}), g_fe({L, C});
      for (std::int64_t i = 0; i < S * S; ++i)
        for (std::int64_t c = 0; c < C; ++c) {
          g_fr.at2(Lt + i, c) = g_grid[i * 2 * C + c];
          g_fe.at2(Lt + i, c) = g_grid[i * 2 * C + C + c];
        }
      DenseArray<T> g_rgb, g_evt;
      fusion_backward(fusion, ctx.fusion, g_fr, g_fe, mode, g_rgb, g_evt);
      backbone_backward(embed_rgb, blocks_rgb, ctx.rgb, g_rgb, mode);
      backbone_backward(embed_evt, blocks_evt, ctx.evt, g_evt, mode);
    } else {
      DenseArray<T> g_out({L, C});
      for (std::int64_t i = 0; i < S * S; ++i)
        for (std::int64_t c = 0; c < C; ++c) g_out.at2(Lt + i, c) = g_grid[i * C + c];
      if (has_rgb()) backbone_backward(embed_rgb, blocks_rgb, ctx.rgb, g_out, mode);
      else backbone_backward(embed_evt, blocks_evt, ctx.evt, g_out, mode);
    }
  }

  void backbone_forward(EmbedParams<T>& e, std::vector<VimBlockParams<T>>& blocks,
                        const DenseArray<T>& img_t, const DenseArray<T>& img_s, ZohMode mode,
                        BackboneCtx<T>& ctx) {
    ctx.patches_t = im2row(img_t, cfg.patch);
    ctx.patches_s = im2row(img_s, cfg.patch);
    DenseArray<T> tok_t = linear(ctx.patches_t, e.w.value, e.b.value);
    add_inplace(tok_t, e.pos_t.value);
    DenseArray<T> tok_s = linear(ctx.patches_s, e.w.value, e.b.value);
    add_inplace(tok_s, e.pos_s.value);
    DenseArray<T> tok = concat_rows(tok_t, tok_s);
    ctx.blocks.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i)
      tok = vim_block_forward(blocks[i], tok, mode, ctx.blocks[i]);
    ctx.out = std::move(tok);
  }

  void backbone_backward(EmbedParams<T>& e, std::vector<VimBlockParams<T>>& blocks,
                         BackboneCtx<T>& ctx, const DenseArray<T>& g_out, ZohMode mode) {
    DenseArray<T> g = g_out;
    for (std::int64_t i = static_cast<std::int64_t>(blocks.size()) - 1; i >= 0; --i) {
      DenseArray<T> gh;
      vim_block_backward(blocks[static_cast<std::size_t>(i)],
                         ctx.blocks[static_cast<std::size_t>(i)], g, mode, gh);
      g = std::move(gh);
    }
    const std::int64_t Lt = tokens_template();
    DenseArray<T> g_t = take_rows(g, 0, Lt);
    DenseArray<T> g_s = take_rows(g, Lt, g.extent(0));
    add_inplace(e.pos_t.grad, g_t);
    add_inplace(e.pos_s.grad, g_s);
    DenseArray<T> scratch;
    linear_backward(ctx.patches_t, e.w.value, g_t, scratch, e.w.grad, e.b.grad);
    linear_backward(ctx.patches_s, e.w.value, g_s, scratch, e.w.grad, e.b.grad);
  }
};

}  // namespace fetrack
