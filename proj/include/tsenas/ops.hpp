#pragma once

// Differentiable primitives recorded on a Tape. Every op is generic in the
// scalar type so the same graph runs on double (gradients) and Dual
// (gradients plus Hessian-vector products).

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tsenas/tape.hpp"

namespace tsenas::ad {

namespace detail {

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class S>
void require_same_tape(const Var<S>& a, const Var<S>& b) {
  if (a.tape() != b.tape()) throw Error("operands live on different tapes");
}

template <class S>
void accumulate(Tape<S>& tape, Var<S> target, const BasicTensor<S>& g) {
  if (!tape.requires_grad(target)) return;
  auto dst = tape.grad(target).values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline std::size_t leading(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  BasicTensor<S> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, "add",
                          [a, b](Tape<S>& t, const BasicTensor<S>& g) {
                            detail::accumulate(t, a, g);
                            detail::accumulate(t, b, g);
                          });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  BasicTensor<S> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, "sub",
                          [a, b](Tape<S>& t, const BasicTensor<S>& g) {
                            detail::accumulate(t, a, g);
                            BasicTensor<S> neg = g;
                            for (S& x : neg.values()) x = -x;
                            detail::accumulate(t, b, neg);
                          });
}

// Elementwise product.
template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  BasicTensor<S> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape()->record(
      std::move(out), {a, b}, "mul", [a, b](Tape<S>& t, const BasicTensor<S>& g) {
        const auto av = a.value().values();
        const auto bv = b.value().values();
        const auto gv = g.values();
        if (t.requires_grad(a)) {
          auto ga = t.grad(a).values();
          for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * bv[i];
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad(b).values();
          for (std::size_t i = 0; i < gv.size(); ++i) gb[i] += gv[i] * av[i];
        }
      });
}

template <class S>
Var<S> scale(Var<S> a, double c) {
  BasicTensor<S> out = a.value();
  for (S& x : out.values()) x *= S{c};
  return a.tape()->record(std::move(out), {a}, "scale",
                          [a, c](Tape<S>& t, const BasicTensor<S>& g) {
                            auto ga = t.grad(a).values();
                            auto gv = g.values();
                            for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * S{c};
                          });
}

template <class S>
Var<S> square(Var<S> a) {
  return mul(a, a);
}

template <class S>
Var<S> tanh(Var<S> a) {
  using std::tanh;
  BasicTensor<S> out = a.value();
  for (S& x : out.values()) x = tanh(x);
  BasicTensor<S> y = out;
  return a.tape()->record(
      std::move(out), {a}, "tanh", [a, y = std::move(y)](Tape<S>& t, const BasicTensor<S>& g) {
        const auto yv = y.values();
        auto ga = t.grad(a).values();
        const auto gv = g.values();
        for (std::size_t i = 0; i < gv.size(); ++i) {
          ga[i] += gv[i] * (S{1.0} - yv[i] * yv[i]);
        }
      });
}

// Standardizes every vector along the last axis: (x - mean) / sqrt(var + eps).
template <class S>
Var<S> normalize_last(Var<S> a, double eps = 1e-5) {
  using std::sqrt;
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.value().size() / c;
  BasicTensor<S> out = a.value();
  std::vector<S> inv(rows);
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    S mu{};
    for (std::size_t k = 0; k < c; ++k) mu += ov[r * c + k];
    mu = mu / static_cast<double>(c);
    S var{};
    for (std::size_t k = 0; k < c; ++k) {
      const S d = ov[r * c + k] - mu;
      var += d * d;
    }
    inv[r] = S{1.0} / sqrt(var / static_cast<double>(c) + S{eps});
    for (std::size_t k = 0; k < c; ++k) ov[r * c + k] = (ov[r * c + k] - mu) * inv[r];
  }
  BasicTensor<S> y = out;
  return a.tape()->record(
      std::move(out), {a}, "normalize_last",
      [a, y = std::move(y), inv = std::move(inv), c, rows](Tape<S>& t, const BasicTensor<S>& g) {
        const auto yv = y.values();
        const auto gv = g.values();
        auto ga = t.grad(a).values();
        for (std::size_t r = 0; r < rows; ++r) {
          S gm{}, gy{};
          for (std::size_t k = 0; k < c; ++k) {
            gm += gv[r * c + k];
            gy += gv[r * c + k] * yv[r * c + k];
          }
          gm = gm / static_cast<double>(c);
          gy = gy / static_cast<double>(c);
          for (std::size_t k = 0; k < c; ++k) {
            ga[r * c + k] += inv[r] * (gv[r * c + k] - gm - yv[r * c + k] * gy);
          }
        }
      });
}

template <class S>
Var<S> sum(Var<S> a) {
  S total{};
  for (const S& x : a.value().values()) total += x;
  return a.tape()->record(BasicTensor<S>::scalar(total), {a}, "sum",
                          [a](Tape<S>& t, const BasicTensor<S>& g) {
                            const S gs = g[0];
                            for (S& x : t.grad(a).values()) x += gs;
                          });
}

template <class S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

template <class S>
Var<S> dot(Var<S> a, Var<S> b) {
  return sum(mul(a, b));
}

template <class S>
Var<S> reshape(Var<S> a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  return a.tape()->record(a.value().reshaped(std::move(shape)), {a}, "reshape",
                          [a](Tape<S>& t, const BasicTensor<S>& g) {
                            auto ga = t.grad(a).values();
                            auto gv = g.values();
                            for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
                          });
}

// Contiguous range [offset, offset + numel(shape)) of a, viewed as `shape`.
template <class S>
Var<S> slice(Var<S> a, std::size_t offset, Shape shape) {
  const std::size_t n = numel(shape);
  if (offset + n > a.value().size()) {
    throw ShapeError("slice: range exceeds tensor of shape " + shape_string(a.shape()));
  }
  const auto av = a.value().values();
  std::vector<S> v(av.begin() + static_cast<std::ptrdiff_t>(offset),
                   av.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return a.tape()->record(BasicTensor<S>(std::move(shape), std::move(v)), {a}, "slice",
                          [a, offset](Tape<S>& t, const BasicTensor<S>& g) {
                            auto ga = t.grad(a).values();
                            const auto gv = g.values();
                            for (std::size_t i = 0; i < gv.size(); ++i) ga[offset + i] += gv[i];
                          });
}

// Contracts the last axis of x (..., K) with a (K, N) matrix.
template <class S>
Var<S> matmul_last(Var<S> x, Var<S> w) {
  detail::require_same_tape(x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw ShapeError("matmul_last: incompatible shapes " + shape_string(xs) +
                     " and " + shape_string(ws));
  }
  const std::size_t rows = detail::leading(xs);
  const std::size_t k = ws[0];
  const std::size_t n = ws[1];
  Shape out_shape = xs;
  out_shape.back() = n;
  BasicTensor<S> out(out_shape);
  {
    const auto xv = x.value().values();
    const auto wv = w.value().values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t p = 0; p < k; ++p) {
        const S xr = xv[r * k + p];
        for (std::size_t c = 0; c < n; ++c) ov[r * n + c] += xr * wv[p * n + c];
      }
    }
  }
  return x.tape()->record(
      std::move(out), {x, w}, "matmul",
      [x, w, rows, k, n](Tape<S>& t, const BasicTensor<S>& g) {
        const auto gv = g.values();
        const auto xv = x.value().values();
        const auto wv = w.value().values();
        if (t.requires_grad(x)) {
          auto gx = t.grad(x).values();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < k; ++p) {
              S acc{};
              for (std::size_t c = 0; c < n; ++c) acc += gv[r * n + c] * wv[p * n + c];
              gx[r * k + p] += acc;
            }
        }
        if (t.requires_grad(w)) {
          auto gw = t.grad(w).values();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < k; ++p) {
              const S xr = xv[r * k + p];
              for (std::size_t c = 0; c < n; ++c) gw[p * n + c] += xr * gv[r * n + c];
            }
        }
      });
}

// Adds a bias vector (N) along the last axis of x (..., N).
template <class S>
Var<S> add_bias(Var<S> x, Var<S> b) {
  detail::require_same_tape(x, b);
  const Shape& xs = x.shape();
  if (xs.empty() || b.shape().size() != 1 || b.shape()[0] != xs.back()) {
    throw ShapeError("add_bias: incompatible shapes " + shape_string(xs) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t n = xs.back();
  BasicTensor<S> out = x.value();
  {
    auto ov = out.values();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i % n];
  }
  return x.tape()->record(std::move(out), {x, b}, "add_bias",
                          [x, b, n](Tape<S>& t, const BasicTensor<S>& g) {
                            detail::accumulate(t, x, g);
                            if (t.requires_grad(b)) {
                              auto gb = t.grad(b).values();
                              const auto gv = g.values();
                              for (std::size_t i = 0; i < gv.size(); ++i) gb[i % n] += gv[i];
                            }
                          });
}

// Softmax of a rank-1 tensor, computed with the max-shift.
template <class S>
Var<S> softmax(Var<S> a) {
  using std::exp;
  if (a.shape().size() != 1) {
    throw ShapeError("softmax expects a vector, got " + shape_string(a.shape()));
  }
  const auto av = a.value().values();
  S m = av[0];
  for (const S& x : av) if (x > m) m = x;
  BasicTensor<S> out(a.shape());
  auto ov = out.values();
  S z{};
  for (std::size_t i = 0; i < av.size(); ++i) {
    ov[i] = exp(av[i] - m);
    z += ov[i];
  }
  for (S& x : ov) x /= z;
  BasicTensor<S> p = out;
  return a.tape()->record(std::move(out), {a}, "softmax",
                          [a, p = std::move(p)](Tape<S>& t, const BasicTensor<S>& g) {
                            const auto pv = p.values();
                            const auto gv = g.values();
                            S inner{};
                            for (std::size_t i = 0; i < pv.size(); ++i) inner += gv[i] * pv[i];
                            auto ga = t.grad(a).values();
                            for (std::size_t i = 0; i < pv.size(); ++i) {
                              ga[i] += pv[i] * (gv[i] - inner);
                            }
                          });
}

// y = sum_k weights[which[k]] * xs[k]; all xs share one shape.
template <class S>
Var<S> mix(const std::vector<Var<S>>& xs, Var<S> weights,
           const std::vector<std::size_t>& which) {
  if (xs.empty() || xs.size() != which.size()) {
    throw ShapeError("mix: need one weight index per operand");
  }
  const std::size_t nw = weights.value().size();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    detail::require_same_tape(xs[k], weights);
    detail::require_same_shape(xs[k], xs[0], "mix");
    if (which[k] >= nw) throw ShapeError("mix: weight index out of range");
  }
  BasicTensor<S> out(xs[0].shape());
  auto ov = out.values();
  const auto wv = weights.value().values();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto xv = xs[k].value().values();
    const S c = wv[which[k]];
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += c * xv[i];
  }
  std::vector<Var<S>> inputs = xs;
  inputs.push_back(weights);
  return weights.tape()->record(
      std::move(out), inputs, "mix",
      [xs, weights, which](Tape<S>& t, const BasicTensor<S>& g) {
        const auto gv = g.values();
        const auto wv = weights.value().values();
        for (std::size_t k = 0; k < xs.size(); ++k) {
          const S c = wv[which[k]];
          if (t.requires_grad(xs[k])) {
            auto gx = t.grad(xs[k]).values();
            for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += c * gv[i];
          }
          if (t.requires_grad(weights)) {
            const auto xv = xs[k].value().values();
            S acc{};
            for (std::size_t i = 0; i < gv.size(); ++i) acc += gv[i] * xv[i];
            t.grad(weights)[which[k]] += acc;
          }
        }
      });
}

// Mean softmax cross-entropy of (B, K) logits against integer labels.
template <class S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> labels) {
  using std::exp;
  using std::log;
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(ls) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = ls[0];
  const std::size_t k = ls[1];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(k) + ")");
    }
  }
  const auto lv = logits.value().values();
  BasicTensor<S> probs(ls);
  auto pv = probs.values();
  S total{};
  for (std::size_t r = 0; r < b; ++r) {
    S m = lv[r * k];
    for (std::size_t c = 1; c < k; ++c) if (lv[r * k + c] > m) m = lv[r * k + c];
    S z{};
    for (std::size_t c = 0; c < k; ++c) {
      pv[r * k + c] = exp(lv[r * k + c] - m);
      z += pv[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) pv[r * k + c] /= z;
    total += (m + log(z)) - lv[r * k + static_cast<std::size_t>(labels[r])];
  }
  total /= S{static_cast<double>(b)};
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape()->record(
      BasicTensor<S>::scalar(total), {logits}, "cross_entropy",
      [logits, probs = std::move(probs), ys = std::move(ys), b, k](
          Tape<S>& t, const BasicTensor<S>& g) {
        const S scale = g[0] / S{static_cast<double>(b)};
        auto gl = t.grad(logits).values();
        const auto pv = probs.values();
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t c = 0; c < k; ++c) {
            S d = pv[r * k + c];
            if (static_cast<std::size_t>(ys[r]) == c) d -= S{1.0};
            gl[r * k + c] += scale * d;
          }
        }
      });
}

// 3x3 convolution, stride 1, zero padding 1. x is (B, H, W, Cin), kernel
// is (3, 3, Cin, Cout).
template <class S>
Var<S> conv3x3(Var<S> x, Var<S> kernel) {
  detail::require_same_tape(x, kernel);
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || ks[0] != 3 || ks[1] != 3 ||
      ks[2] != xs[3]) {
    throw ShapeError("conv3x3: incompatible shapes " + shape_string(xs) + " and " +
                     shape_string(ks));
  }
  const std::size_t nb = xs[0], h = xs[1], w = xs[2], ci = xs[3], co = ks[3];
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t di = 0; di < 3; ++di) {
            if (i + di < 1 || i + di - 1 >= h) continue;
            for (std::size_t dj = 0; dj < 3; ++dj) {
              if (j + dj < 1 || j + dj - 1 >= w) continue;
              const std::size_t in = ((n * h + (i + di - 1)) * w + (j + dj - 1)) * ci;
              const std::size_t out = ((n * h + i) * w + j) * co;
              const std::size_t ker = (di * 3 + dj) * ci * co;
              fn(in, out, ker);
            }
          }
  };
  BasicTensor<S> out(Shape{nb, h, w, co});
  {
    const auto xv = x.value().values();
    const auto kv = kernel.value().values();
    auto ov = out.values();
    for_each_tap([&](std::size_t in, std::size_t o, std::size_t ker) {
      for (std::size_t p = 0; p < ci; ++p) {
        const S xp = xv[in + p];
        for (std::size_t c = 0; c < co; ++c) ov[o + c] += xp * kv[ker + p * co + c];
      }
    });
  }
  return x.tape()->record(
      std::move(out), {x, kernel}, "conv3x3",
      [x, kernel, for_each_tap, ci, co](Tape<S>& t, const BasicTensor<S>& g) {
        const auto gv = g.values();
        const auto xv = x.value().values();
        const auto kv = kernel.value().values();
        const bool need_x = t.requires_grad(x);
        const bool need_k = t.requires_grad(kernel);
        std::span<S> gx = need_x ? t.grad(x).values() : std::span<S>{};
        std::span<S> gk = need_k ? t.grad(kernel).values() : std::span<S>{};
        for_each_tap([&](std::size_t in, std::size_t o, std::size_t ker) {
          for (std::size_t p = 0; p < ci; ++p) {
            S acc{};
            for (std::size_t c = 0; c < co; ++c) {
              if (need_k) gk[ker + p * co + c] += xv[in + p] * gv[o + c];
              acc += gv[o + c] * kv[ker + p * co + c];
            }
            if (need_x) gx[in + p] += acc;
          }
        });
      });
}

// 3x3 average pooling, stride 1, padding 1, averaging only in-bounds taps.
template <class S>
Var<S> avg_pool3x3(Var<S> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("avg_pool3x3 expects (B, H, W, C)");
  const std::size_t nb = xs[0], h = xs[1], w = xs[2], c = xs[3];
  auto for_each_window = [=](auto&& fn) {
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t i0 = i > 0 ? i - 1 : 0, i1 = std::min(h, i + 2);
          const std::size_t j0 = j > 0 ? j - 1 : 0, j1 = std::min(w, j + 2);
          const double inv = 1.0 / static_cast<double>((i1 - i0) * (j1 - j0));
          const std::size_t out = ((n * h + i) * w + j) * c;
          for (std::size_t a = i0; a < i1; ++a)
            for (std::size_t b = j0; b < j1; ++b) fn(((n * h + a) * w + b) * c, out, inv);
        }
  };
  BasicTensor<S> out(xs);
  {
    const auto xv = x.value().values();
    auto ov = out.values();
    for_each_window([&](std::size_t in, std::size_t o, double inv) {
      for (std::size_t k = 0; k < c; ++k) ov[o + k] += xv[in + k] * S{inv};
    });
  }
  return x.tape()->record(std::move(out), {x}, "avg_pool3x3",
                          [x, for_each_window, c](Tape<S>& t, const BasicTensor<S>& g) {
                            const auto gv = g.values();
                            auto gx = t.grad(x).values();
                            for_each_window([&](std::size_t in, std::size_t o, double inv) {
                              for (std::size_t k = 0; k < c; ++k) gx[in + k] += gv[o + k] * S{inv};
                            });
                          });
}

// (B, H, W, C) -> (B, C) by averaging over spatial positions.
template <class S>
Var<S> spatial_mean(Var<S> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("spatial_mean expects (B, H, W, C)");
  const std::size_t nb = xs[0], hw = xs[1] * xs[2], c = xs[3];
  const double inv = 1.0 / static_cast<double>(hw);
  BasicTensor<S> out(Shape{nb, c});
  {
    const auto xv = x.value().values();
    auto ov = out.values();
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t s = 0; s < hw; ++s)
        for (std::size_t k = 0; k < c; ++k) ov[n * c + k] += xv[(n * hw + s) * c + k] * S{inv};
  }
  return x.tape()->record(std::move(out), {x}, "spatial_mean",
                          [x, nb, hw, c, inv](Tape<S>& t, const BasicTensor<S>& g) {
                            const auto gv = g.values();
                            auto gx = t.grad(x).values();
                            for (std::size_t n = 0; n < nb; ++n)
                              for (std::size_t s = 0; s < hw; ++s)
                                for (std::size_t k = 0; k < c; ++k)
                                  gx[(n * hw + s) * c + k] += gv[n * c + k] * S{inv};
                          });
}

}  // namespace tsenas::ad
