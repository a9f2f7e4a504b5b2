#pragma once

// Training loop: sample a (template, search) pair, run the tracker forward,
// push the combined objective back through the hand-written gradients, and
// take a decoupled-weight-decay optimizer step on the batch-mean gradient.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "fetrack/data.hpp"
#include "fetrack/losses.hpp"
#include "fetrack/model.hpp"
#include "fetrack/optim.hpp"

namespace fetrack {

struct TrainStats {
  std::vector<double> losses;  // batch-mean objective per step

  // Mean over the first / last `k` steps; used as the learning signal check.
  double head_mean(std::size_t k) const { return span_mean(0, k); }
  double tail_mean(std::size_t k) const {
    return span_mean(losses.size() > k ? losses.size() - k : 0, k);
  }

 private:
  double span_mean(std::size_t from, std::size_t k) const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = from; i < losses.size() && n < k; ++i, ++n) s += losses[i];
    return n ? s / double(n) : 0.0;
  }
};

// Runs cfg.steps optimizer steps. Every random draw (sequence choice, frame
// pair, jitter) comes from one counter-based stream seeded by cfg.seed, so a
// rerun with the same inputs reproduces the run bit for bit. `log`, when
// given, receives one "step loss" line per step.
template <typename T>
TrainStats train_model(TrackerModel<T>& model, const std::vector<SequenceData>& data,
                       const RunConfig& cfg, std::ostream* log = nullptr) {
  FETRACK_CHECK_VALUE(!data.empty(), "train_model: no sequences");
  FETRACK_CHECK_VALUE(cfg.batch >= 1, "train_model: batch must be >= 1");
  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW<T> opt(oc);
  Rng rng(static_cast<std::uint64_t>(cfg.seed), 0x747261696eull);

  TrainStats stats;
  stats.losses.reserve(static_cast<std::size_t>(cfg.steps));
  const std::int64_t S = cfg.score_cells();
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    model.zero_grads();
    std::vector<SampleInput<T>> inputs(static_cast<std::size_t>(cfg.batch));
    std::vector<BoxF> gts(static_cast<std::size_t>(cfg.batch));
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const std::int64_t si = rng.next_index(std::int64_t(data.size()));
      const TrainSample sample = make_train_sample(data[static_cast<std::size_t>(si)], cfg, rng);
      inputs[static_cast<std::size_t>(b)] = to_input<T>(sample);
      gts[static_cast<std::size_t>(b)] = sample.gt_box;
    }
    // One batched forward so the head's normalization statistics cover the
    // whole batch, not a single sample.
    BatchCtx<T> ctx;
    HeadOut<T> maps = model.forward_batch(inputs, ctx);
    DenseArray<T> g_score({cfg.batch, S, S, 1});
    DenseArray<T> g_offset({cfg.batch, S, S, 2});
    DenseArray<T> g_size({cfg.batch, S, S, 2});
    double loss_sum = 0;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const HeadOut<T> m = slice_maps(maps, b);
      LossOut<T> lo = compute_tracking_loss(m, gts[static_cast<std::size_t>(b)]);
      if (!std::isfinite(lo.total)) throw NumericError("train_model: non-finite loss");
      std::copy(lo.g_score.data(), lo.g_score.data() + lo.g_score.numel(),
                g_score.data() + b * S * S * 1);
      std::copy(lo.g_offset.data(), lo.g_offset.data() + lo.g_offset.numel(),
                g_offset.data() + b * S * S * 2);
      std::copy(lo.g_size.data(), lo.g_size.data() + lo.g_size.numel(),
                g_size.data() + b * S * S * 2);
      loss_sum += lo.total;
    }
    model.backward_batch(ctx, g_score, g_offset, g_size);
    const T inv_batch = T(1) / T(cfg.batch);
    model.visit([&](const std::string&, Param<T>& p) {
      for (std::int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] *= inv_batch;
    });
    opt.step(model);
    stats.losses.push_back(loss_sum / double(cfg.batch));
    if (log) {
      char line[64];
      std::snprintf(line, sizeof line, "%lld %.6f\n", static_cast<long long>(step),
                    stats.losses.back());
      *log << line;
    }
  }
  return stats;
}

}  // namespace fetrack
