#pragma once

// Independent oracles shared by the test binaries: finite differences,
// relative errors and seeded random fills. Nothing here calls into the
// reverse-mode engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace tsenas::testing {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences with step h.
inline std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double h) {
  std::vector<double> g(x.size());
  std::vector<double> p(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = p[i];
    p[i] = xi + h;
    const double fp = f(p);
    p[i] = xi - h;
    const double fm = f(p);
    p[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Five-point central stencil, O(h^4) truncation.
inline std::vector<double> fd_gradient5(const ScalarFn& f, std::span<const double> x, double h) {
  std::vector<double> g(x.size());
  std::vector<double> p(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = p[i];
    auto at = [&](double d) {
      p[i] = xi + d;
      return f(p);
    };
    const double f2p = at(2 * h), f1p = at(h), f1m = at(-h), f2m = at(-2 * h);
    p[i] = xi;
    g[i] = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_err(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// |a - b| / |b| in the Euclidean norm.
inline double rel_norm_err(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d) / std::max(norm2(b), 1e-300);
}

inline std::vector<double> uniform_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                       double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace tsenas::testing
