#pragma once

#include <cmath>

namespace tsenas::ad {

// Forward-mode dual number. Running the reverse sweep of a tape on Dual
// values yields gradient (val) and Hessian-vector product (tan) together.
struct Dual {
  double val = 0.0;
  double tan = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : val(v) {}  // NOLINT: implicit from constants
  constexpr Dual(double v, double t) : val(v), tan(t) {}

  Dual& operator+=(const Dual& o) {
    val += o.val;
    tan += o.tan;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    tan -= o.tan;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    tan = tan * o.val + val * o.tan;
    val *= o.val;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.val;
    tan = (tan * o.val - val * o.tan) * inv * inv;
    val *= inv;
    return *this;
  }
};

inline Dual operator-(const Dual& a) { return {-a.val, -a.tan}; }
inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }

inline bool operator<(const Dual& a, const Dual& b) { return a.val < b.val; }
inline bool operator>(const Dual& a, const Dual& b) { return a.val > b.val; }

inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.val);
  return {t, (1.0 - t * t) * a.tan};
}
inline Dual sqrt(const Dual& a) {
  const double r = std::sqrt(a.val);
  return {r, a.tan / (2.0 * r)};
}
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.val);
  return {e, e * a.tan};
}
inline Dual log(const Dual& a) { return {std::log(a.val), a.tan / a.val}; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.val; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Dual& x) {
  return std::isfinite(x.val) && std::isfinite(x.tan);
}

}  // namespace tsenas::ad
