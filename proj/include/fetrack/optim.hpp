#pragma once

// AdamW with decoupled weight decay. Decay is applied first, multiplicatively
// (p *= 1 - lr*wd), then the bias-corrected adaptive step. Moment buffers are
// kept in double regardless of the parameter precision so long runs at float
// precision do not lose small gradient contributions to moment rounding.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/blocks.hpp"

namespace fetrack {

struct AdamWConfig {
  double lr = 4e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One parameter tensor, one step. t is 1-based.
template <typename T>
void adamw_update(T* p, const T* g, double* m, double* v, std::int64_t n, std::int64_t t,
                  const AdamWConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::int64_t i = 0; i < n; ++i) {
    const double gi = static_cast<double>(g[i]);
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    double pv = static_cast<double>(p[i]) * decay;
    pv -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    p[i] = static_cast<T>(pv);
  }
}

// Slots are matched to parameters positionally by visit order, which is fixed
// for a given model configuration.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  template <typename Model>
  void step(Model& model) {
    ++t_;
    std::size_t slot = 0;
    model.visit([&](const std::string&, Param<T>& p) {
      if (slot == slots_.size())
        slots_.push_back(Slot{DenseArray<double>(p.value.shape()), DenseArray<double>(p.value.shape())});
      Slot& s = slots_[slot];
      FETRACK_CHECK_DIM(s.m.numel() == p.value.numel(), "optimizer slot/parameter mismatch");
      adamw_update(p.value.data(), p.grad.data(), s.m.data(), s.v.data(), p.value.numel(), t_,
                   cfg_);
      ++slot;
    });
  }

  std::int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  struct Slot {
    DenseArray<double> m, v;
  };
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace fetrack
