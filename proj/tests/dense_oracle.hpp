#pragma once

// Reference implementations used only by tests. They reach the same
// mathematical results as the library kernels through deliberately different
// numerics, so agreement is evidence rather than tautology:
//   - the discretization factors come from a generic 2x2 augmented-matrix
//     exponential (scaling-and-squaring + Taylor, long double), not from
//     exp/expm1 closed forms;
//   - the recurrence is evaluated as a dense matrix-vector iteration over the
//     flattened (D*N) state, not as an elementwise scan.

#include <array>
#include <cmath>
#include <cstdint>

#include "fetrack/rng.hpp"
#include "fetrack/ssm.hpp"

namespace oracle {

using Mat2 = std::array<long double, 4>;  // row-major 2x2

inline Mat2 mat2_mul(const Mat2& p, const Mat2& q) {
  return {p[0] * q[0] + p[1] * q[2], p[0] * q[1] + p[1] * q[3],
          p[2] * q[0] + p[3] * q[2], p[2] * q[1] + p[3] * q[3]};
}

// exp([[x, y], [0, 0]]) computed generically; its top row is
// (exp(x), y * (exp(x) - 1) / x) in closed form, which the caller never uses.
inline Mat2 aug_expm(long double x, long double y) {
  long double norm = std::max(std::fabs(x), std::fabs(y));
  int squarings = 0;
  while (norm > 0.5L) {
    norm *= 0.5L;
    ++squarings;
  }
  const long double scale = std::ldexp(1.0L, -squarings);
  Mat2 m = {x * scale, y * scale, 0.0L, 0.0L};
  Mat2 sum = {1.0L, 0.0L, 0.0L, 1.0L};  // identity
  Mat2 term = {1.0L, 0.0L, 0.0L, 1.0L};
  for (int k = 1; k <= 40; ++k) {
    term = mat2_mul(term, m);
    for (auto& v : term) v /= static_cast<long double>(k);
    bool tiny = true;
    for (int i = 0; i < 4; ++i) {
      sum[i] += term[i];
      if (std::fabs(term[i]) > 1e-24L * (1.0L + std::fabs(sum[i]))) tiny = false;
    }
    if (tiny) break;
  }
  for (int s = 0; s < squarings; ++s) sum = mat2_mul(sum, sum);
  return sum;
}

// ZOH factors for one (delta, a, b) element straight from the matrix
// exponential of the augmented system.
inline std::pair<long double, long double> zoh_pair(long double delta, long double a,
                                                    long double b, fetrack::ZohMode mode) {
  if (mode == fetrack::ZohMode::simplified) {
    const Mat2 m = aug_expm(delta * a, 0.0L);
    return {m[0], delta * b};
  }
  const Mat2 m = aug_expm(delta * a, delta * b);
  return {m[0], m[1]};
}

// Dense reference scan. State is the flattened (D*N) vector; each step applies
// a full (D*N)x(D*N) transition matrix even though only its diagonal is
// nonzero, in long double throughout.
inline fetrack::DenseArray<double> dense_scan_oracle(const fetrack::DenseArray<double>& A_log,
                                                     const fetrack::DenseArray<double>& D_skip,
                                                     const fetrack::ScanInputs<double>& in,
                                                     fetrack::ZohMode mode) {
  const std::int64_t L = in.x_prime.extent(0);
  const std::int64_t D = A_log.extent(0), N = A_log.extent(1);
  const std::int64_t S = D * N;
  std::vector<long double> h(static_cast<std::size_t>(S), 0.0L);
  std::vector<long double> hn(static_cast<std::size_t>(S));
  std::vector<long double> M(static_cast<std::size_t>(S * S));
  std::vector<long double> u(static_cast<std::size_t>(S));
  fetrack::DenseArray<double> y({L, D});

  for (std::int64_t t = 0; t < L; ++t) {
    std::fill(M.begin(), M.end(), 0.0L);
    for (std::int64_t d = 0; d < D; ++d) {
      const long double dt = in.delta.at2(t, d);
      for (std::int64_t n = 0; n < N; ++n) {
        const long double a = -std::exp(static_cast<long double>(A_log.at2(d, n)));
        const long double b = in.B_t.at2(t, n);
        auto [abar, bbar] = zoh_pair(dt, a, b, mode);
        const std::int64_t i = d * N + n;
        M[static_cast<std::size_t>(i * S + i)] = abar;
        u[static_cast<std::size_t>(i)] = bbar * static_cast<long double>(in.x_prime.at2(t, d));
      }
    }
    for (std::int64_t i = 0; i < S; ++i) {
      long double acc = u[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < S; ++j)
        acc += M[static_cast<std::size_t>(i * S + j)] * h[static_cast<std::size_t>(j)];
      hn[static_cast<std::size_t>(i)] = acc;
    }
    h.swap(hn);
    for (std::int64_t d = 0; d < D; ++d) {
      long double acc = 0.0L;
      for (std::int64_t n = 0; n < N; ++n)
        acc += static_cast<long double>(in.C_t.at2(t, n)) * h[static_cast<std::size_t>(d * N + n)];
      if (!D_skip.empty())
        acc += static_cast<long double>(D_skip[d]) * static_cast<long double>(in.x_prime.at2(t, d));
      y.at2(t, d) = static_cast<double>(acc);
    }
  }
  return y;
}

// Shared random-instance generator. Magnitudes are kept moderate (|a| in
// [0.5, 4], delta in [0.2, 1]) so the recurrence neither explodes nor holds
// memory much longer than ~10 steps; that keeps float accumulation error well
// under the comparison tolerance.
struct ScanCase {
  fetrack::DenseArray<double> A_log;   // (D, N)
  fetrack::DenseArray<double> D_skip;  // (D) or empty
  fetrack::ScanInputs<double> in;
};

inline ScanCase make_scan_case(std::uint64_t seed, std::int64_t Lmax = 64, std::int64_t Dmax = 8,
                               std::int64_t Nmax = 8, bool with_skip = true) {
  fetrack::Rng rng(seed);
  const std::int64_t L = 1 + rng.next_index(Lmax);
  const std::int64_t D = 1 + rng.next_index(Dmax);
  const std::int64_t N = 1 + rng.next_index(Nmax);
  ScanCase c;
  c.A_log = fetrack::DenseArray<double>({D, N});
  for (std::int64_t i = 0; i < c.A_log.numel(); ++i)
    c.A_log[i] = rng.next_uniform(std::log(0.5), std::log(4.0));
  if (with_skip) {
    c.D_skip = fetrack::DenseArray<double>({D});
    for (std::int64_t i = 0; i < D; ++i) c.D_skip[i] = rng.next_gaussian();
  }
  c.in.x_prime = fetrack::DenseArray<double>({L, D});
  c.in.delta = fetrack::DenseArray<double>({L, D});
  c.in.B_t = fetrack::DenseArray<double>({L, N});
  c.in.C_t = fetrack::DenseArray<double>({L, N});
  for (std::int64_t i = 0; i < L * D; ++i) {
    c.in.x_prime[i] = rng.next_gaussian();
    c.in.delta[i] = rng.next_uniform(0.2, 1.0);
  }
  for (std::int64_t i = 0; i < L * N; ++i) {
    c.in.B_t[i] = rng.next_gaussian();
    c.in.C_t[i] = rng.next_gaussian();
  }
  return c;
}

template <typename T>
fetrack::ScanInputs<T> cast_inputs(const fetrack::ScanInputs<double>& in) {
  fetrack::ScanInputs<T> r;
  r.x_prime = in.x_prime.template cast<T>();
  r.B_t = in.B_t.template cast<T>();
  r.C_t = in.C_t.template cast<T>();
  r.delta = in.delta.template cast<T>();
  return r;
}

}  // namespace oracle
