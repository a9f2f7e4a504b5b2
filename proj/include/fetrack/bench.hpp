#pragma once

// Cost accounting: exact parameter counts from an instantiated model and an
// analytic forward-pass FLOP estimate (2 * multiply-accumulates, summed over
// linear maps, convolutions, and scan steps; normalizations, gates, and
// activations are not counted). All arithmetic is integer, so identities like
// linearity in depth hold exactly.

#include <cstdint>
#include <map>
#include <string>

#include "fetrack/config.hpp"
#include "fetrack/model.hpp"

namespace fetrack {

namespace bench_detail {

// One scan direction over L tokens of width E: depthwise conv taps, the
// state/step projections, and per token-channel the discretized recurrence
// (2N for the step scaling, 2N for the state update, N for the readout, 1 for
// the feed-through).
inline std::int64_t dir_macs(std::int64_t L, std::int64_t E, std::int64_t N, std::int64_t R,
                             std::int64_t K) {
  return L * E * K + L * E * (2 * N + R) + L * R * E + L * E * (5 * N + 1);
}

inline std::int64_t head_branch_macs(std::int64_t S, std::int64_t cin, std::int64_t out) {
  std::int64_t macs = 0, c = cin;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t co = std::max<std::int64_t>(c / 2, 4);
    macs += S * S * 9 * c * co;
    c = co;
  }
  return macs + S * S * c * out;
}

}  // namespace bench_detail

// Multiply-accumulate count of one forward pass at the configured patch
// geometry; FLOPs are 2x this.
inline std::int64_t estimate_macs(const RunConfig& cfg) {
  using namespace bench_detail;
  const std::int64_t p = cfg.patch, C = cfg.channels, E = cfg.expand * C;
  const std::int64_t N = cfg.state, R = cfg.dt_rank_effective(), K = cfg.conv_width;
  const std::int64_t Lt = (cfg.template_size / p) * (cfg.template_size / p);
  const std::int64_t Ls = (cfg.search_size / p) * (cfg.search_size / p);
  const std::int64_t L = Lt + Ls;
  const Modality mode = cfg.modality_mode();
  const std::int64_t backbones = mode == Modality::fused ? 2 : 1;

  const std::int64_t embed = L * (p * p * 3) * C;
  const std::int64_t block = 2 * L * C * E + 2 * dir_macs(L, E, N, R, K) + L * E * C;
  std::int64_t macs = backbones * (embed + cfg.depth * block);
  if (mode == Modality::fused)
    macs += 2 * (2 * L * C * E + dir_macs(L, E, N, R, K) + L * E * C);

  const std::int64_t S = cfg.score_cells();
  const std::int64_t cin = mode == Modality::fused ? 2 * C : C;
  macs += head_branch_macs(S, cin, 1) + 2 * head_branch_macs(S, cin, 2);
  return macs;
}

inline std::int64_t estimate_flops(const RunConfig& cfg) { return 2 * estimate_macs(cfg); }

struct BenchInfo {
  std::int64_t params = 0;
  double params_mb = 0;  // 4-byte weights
  std::int64_t flops = 0;
};

// Parameter totals come from an instantiated model, so they are exact by
// construction, not a second formula that could drift.
inline BenchInfo bench_config(const RunConfig& cfg) {
  TrackerModel<float> m(cfg);
  BenchInfo b;
  b.params = m.count_params();
  b.params_mb = double(b.params) * 4.0 / 1e6;
  b.flops = estimate_flops(cfg);
  return b;
}

// Parameter count grouped by top-level component (rgb / event / fusion / head).
inline std::map<std::string, std::int64_t> param_breakdown(const RunConfig& cfg) {
  TrackerModel<float> m(cfg);
  std::map<std::string, std::int64_t> out;
  m.visit([&](const std::string& name, Param<float>& p) {
    out[name.substr(0, name.find('.'))] += p.value.numel();
  });
  return out;
}

}  // namespace fetrack
