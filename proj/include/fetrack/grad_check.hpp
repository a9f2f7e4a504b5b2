#pragma once

// Central-difference gradient oracle. Always run in 64-bit; the analytic
// backward passes are verified against this, never against themselves.

#include <cmath>
#include <functional>

#include "fetrack/array.hpp"

namespace fetrack {

// f is evaluated at x +/- h*e_i for every element; x is restored afterwards.
inline DenseArray<double> finite_diff_grad(const std::function<double(const DenseArray<double>&)>& f,
                                           DenseArray<double>& x, double h = 1e-5) {
  DenseArray<double> g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite objective");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Same oracle restricted to chosen flat indices; used on large parameter
// arrays where probing every coordinate would dominate the test budget.
inline DenseArray<double> finite_diff_grad_at(
    const std::function<double(const DenseArray<double>&)>& f, DenseArray<double>& x,
    const std::vector<std::int64_t>& idx, double h = 1e-5) {
  DenseArray<double> g({static_cast<std::int64_t>(idx.size())});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::int64_t i = idx[k];
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad_at: non-finite objective");
    g[static_cast<std::int64_t>(k)] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// |a-b| / max(|a|, |b|, floor): symmetric relative error with an absolute
// floor so that near-zero pairs compare absolutely.
inline double rel_err(double a, double b, double floor_abs = 1e-6) {
  const double den = std::max({std::fabs(a), std::fabs(b), floor_abs});
  return std::fabs(a - b) / den;
}

template <typename T>
double max_rel_err(const DenseArray<T>& a, const DenseArray<T>& b, double floor_abs = 1e-6) {
  FETRACK_CHECK_DIM(a.numel() == b.numel(), "max_rel_err: size mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, rel_err(static_cast<double>(a[i]), static_cast<double>(b[i]), floor_abs));
  return m;
}

template <typename T>
double max_abs_diff(const DenseArray<T>& a, const DenseArray<T>& b) {
  FETRACK_CHECK_DIM(a.numel() == b.numel(), "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace fetrack
