#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "test_util.hpp"
#include "tsenas/autodiff.hpp"

using namespace tsenas;
using namespace tsenas::ad;
using tsenas::testing::fd_gradient;
using tsenas::testing::max_rel_err;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

// Small tanh network on fixed data: x (4, 3) -> 3 hidden -> 2 classes.
// Parameter vector layout: W1 (3x3), b1 (3), W2 (3x2), b2 (2) = 20 values.
struct TinyMlp {
  Tensor x{Shape{4, 3}, {0.5, -1.0, 0.2, 1.5, 0.3, -0.7, -0.4, 0.8, 1.1, 0.0, -0.2, 0.9}};
  std::vector<int> labels{0, 1, 1, 0};

  static constexpr std::size_t kParams = 20;

  Var<double> build(Tape<double>& t, Var<double> theta) const {
    Var<double> in = t.constant(x);
    Var<double> w1 = slice(theta, 0, {3, 3});
    Var<double> b1 = slice(theta, 9, {3});
    Var<double> w2 = slice(theta, 12, {3, 2});
    Var<double> b2 = slice(theta, 18, {2});
    Var<double> h = ad::tanh(add_bias(matmul_last(in, w1), b1));
    return cross_entropy(add_bias(matmul_last(h, w2), b2), std::span<const int>(labels));
  }

  // Straight-line forward pass, no tape.
  double reference(std::span<const double> th) const {
    double total = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      double h[3];
      for (std::size_t j = 0; j < 3; ++j) {
        double a = th[9 + j];
        for (std::size_t i = 0; i < 3; ++i) a += x[r * 3 + i] * th[i * 3 + j];
        h[j] = std::tanh(a);
      }
      double z[2];
      for (std::size_t c = 0; c < 2; ++c) {
        z[c] = th[18 + c];
        for (std::size_t j = 0; j < 3; ++j) z[c] += h[j] * th[12 + j * 2 + c];
      }
      const double m = std::max(z[0], z[1]);
      const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
      total += lse - z[labels[r]];
    }
    return total / 4.0;
  }
};

}  // namespace

TEST_CASE("forward: square and identity") {
  Tape<double> t;
  Var<double> x = t.parameter("x", Tensor::scalar(3.0));
  Var<double> y = square(x);
  CHECK(y.value().item() == 9.0);
  auto g = t.backward(y);
  CHECK(g.at("x").item() == 6.0);

  Tape<double> t2;
  Var<double> z = t2.parameter("z", vec({1.0, -2.0}));
  CHECK(z.value() == vec({1.0, -2.0}));
  auto gz = t2.backward(z, vec({0.5, 4.0}));
  CHECK(gz.at("z") == vec({0.5, 4.0}));
}

TEST_CASE("backward: product rule") {
  Tape<double> t;
  Var<double> x = t.parameter("x", Tensor::scalar(2.0));
  Var<double> y = t.parameter("y", Tensor::scalar(5.0));
  auto g = t.backward(mul(x, y));
  CHECK(g.at("x").item() == 5.0);
  CHECK(g.at("y").item() == 2.0);
}

TEST_CASE("unused parameters get zero gradients") {
  Tape<double> t;
  Var<double> x = t.parameter("x", Tensor::scalar(2.0));
  t.parameter("unused", vec({1.0, 2.0, 3.0}));
  auto g = t.backward(square(x));
  CHECK(g.at("unused") == Tensor(Shape{3}));
}

TEST_CASE("two-layer network forward matches a straight-line reimplementation") {
  TinyMlp net;
  std::mt19937_64 rng(7);
  const auto theta = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
  const auto vg = value_and_grad([&](Tape<double>& t, Var<double> th) { return net.build(t, th); },
                                 theta);
  CHECK(std::abs(vg.value - net.reference(theta)) < 1e-12);
}

TEST_CASE("20-parameter network gradient matches central differences") {
  TinyMlp net;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto theta = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
    const auto vg = value_and_grad(
        [&](Tape<double>& t, Var<double> th) { return net.build(t, th); }, theta);
    const auto fd = fd_gradient([&](std::span<const double> th) { return net.reference(th); },
                                theta, 1e-5);
    CHECK(max_rel_err(vg.grad, fd, 1e-6) < 1e-5);
  }
}

TEST_CASE("gradient check over every primitive") {
  // Exercises conv3x3, avg_pool3x3, spatial_mean, softmax, mix, sub, reshape.
  std::mt19937_64 rng(11);
  const auto input = tsenas::testing::uniform_vec(2 * 3 * 3 * 2, rng);
  const std::vector<int> labels{1, 0};
  auto build = [&](Tape<double>& t, Var<double> th) {
    Var<double> x = t.constant(Tensor({2, 3, 3, 2}, input));
    Var<double> k = slice(th, 0, {3, 3, 2, 2});     // 36
    Var<double> b = slice(th, 36, {2});              // 2
    Var<double> a = slice(th, 38, {3});              // 3
    Var<double> head = slice(th, 41, {2, 3});        // 6
    Var<double> c = ad::tanh(add_bias(conv3x3(x, k), b));
    Var<double> p = avg_pool3x3(x);
    Var<double> mixed = mix<double>({c, p, sub(c, p)}, softmax(a), {0, 1, 2});
    Var<double> feats = spatial_mean(mixed);
    Var<double> logits = matmul_last(feats, head);
    Var<double> flat = reshape(logits, {6});
    Var<double> reg = scale(dot(flat, flat), 0.01);
    return add(cross_entropy(reshape(flat, {2, 3}), std::span<const int>(labels)), reg);
  };
  const auto theta = tsenas::testing::uniform_vec(47, rng);
  const auto vg = value_and_grad(build, theta);
  const auto fd = fd_gradient([&](std::span<const double> th) { return value_and_grad(build, th).value; },
                              theta, 1e-5);
  CHECK(max_rel_err(vg.grad, fd, 1e-6) < 1e-4);
}

TEST_CASE("backward is linear in the seed") {
  std::mt19937_64 rng(3);
  const auto theta = tsenas::testing::uniform_vec(6, rng);
  auto run = [&](double c) {
    Tape<double> t;
    Var<double> th = t.parameter("theta", vec(theta));
    Var<double> w = slice(th, 0, {3, 2});
    Var<double> x = t.constant(Tensor({2, 3}, {0.1, 0.2, -0.3, 1.0, -1.0, 0.5}));
    Var<double> y = ad::tanh(matmul_last(x, w));
    return t.backward(y, Tensor({2, 2}, {c * 1.0, c * -2.0, c * 0.5, c * 3.0})).at("theta");
  };
  const Tensor g1 = run(1.0);
  const Tensor g3 = run(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g3[i] - 3.0 * g1[i]) < 1e-12);
}

TEST_CASE("evaluation is deterministic to the bit") {
  TinyMlp net;
  std::mt19937_64 rng(5);
  const auto theta = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
  auto f = [&](Tape<double>& t, Var<double> th) { return net.build(t, th); };
  const auto a = value_and_grad(f, theta);
  const auto b = value_and_grad(f, theta);
  CHECK(std::memcmp(&a.value, &b.value, sizeof(double)) == 0);
  CHECK(std::memcmp(a.grad.data(), b.grad.data(), a.grad.size() * sizeof(double)) == 0);
}

TEST_CASE("error paths") {
  SUBCASE("shape mismatch") {
    Tape<double> t;
    Var<double> a = t.parameter("a", vec({1.0, 2.0}));
    Var<double> b = t.parameter("b", vec({1.0, 2.0, 3.0}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(t.backward(a, vec({1.0})), ShapeError);
  }
  SUBCASE("non-finite intermediate") {
    Tape<double> t;
    Var<double> a = t.parameter("a", Tensor::scalar(1e200));
    CHECK_THROWS_AS(mul(a, a), NumericError);
  }
  SUBCASE("tape is single-use") {
    Tape<double> t;
    Var<double> a = t.parameter("a", Tensor::scalar(2.0));
    Var<double> y = square(a);
    t.backward(y);
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(y), Error);
    CHECK_THROWS_AS(square(a), Error);
  }
  SUBCASE("bad tensor construction") {
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1.0}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{0}), ShapeError);
  }
  SUBCASE("cross entropy label out of range") {
    Tape<double> t;
    Var<double> z = t.constant(Tensor({1, 2}, {0.0, 0.0}));
    const std::vector<int> bad{2};
    CHECK_THROWS(cross_entropy(z, std::span<const int>(bad)));
  }
}

TEST_CASE("hvp on a quadratic recovers the matrix") {
  // L = 0.5 theta^T diag(3, 1) theta
  auto grad = gradient_of([](Tape<double>& t, Var<double> th) {
    Var<double> d = t.constant(vec({3.0, 1.0}));
    return scale(dot(mul(th, d), th), 0.5);
  });
  const std::vector<double> theta{0.3, -0.8};
  const auto hv = hvp(grad, theta, std::vector<double>{1.0, 0.0});
  CHECK(std::abs(hv[0] - 3.0) < 1e-6);
  CHECK(std::abs(hv[1]) < 1e-6);

  const auto zero = hvp(grad, theta, std::vector<double>{0.0, 0.0});
  CHECK(zero == std::vector<double>{0.0, 0.0});

  CHECK_THROWS_AS(hvp(grad, theta, std::vector<double>{}), ShapeError);
  CHECK_THROWS_AS(hvp(grad, theta, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS(hvp(grad, theta, std::vector<double>{1.0, 0.0}, -1.0));
}

TEST_CASE("hvp matches a dense finite-difference Hessian on a small network") {
  TinyMlp net;
  std::mt19937_64 rng(21);
  const auto theta = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
  const auto v = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
  auto grad = gradient_of([&](Tape<double>& t, Var<double> th) { return net.build(t, th); });
  const auto hv = hvp(grad, theta, v);

  // Dense Hessian from second differences of the straight-line loss.
  const std::size_t n = TinyMlp::kParams;
  const double h = 1e-4;
  std::vector<double> dense(n * n);
  std::vector<double> p = theta;
  auto f = [&](std::span<const double> th) { return net.reference(th); };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      auto at = [&](double di, double dj) {
        p = theta;
        p[i] += di;
        p[j] += dj;
        return f(p);
      };
      dense[i * n + j] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h);
    }
  std::vector<double> expect(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) expect[i] += dense[i * n + j] * v[j];
  CHECK(tsenas::testing::rel_norm_err(hv, expect) < 1e-3);
}

TEST_CASE("hvp is symmetric") {
  TinyMlp net;
  auto grad = gradient_of([&](Tape<double>& t, Var<double> th) { return net.build(t, th); });
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto theta = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
    const auto u = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
    const auto v = tsenas::testing::uniform_vec(TinyMlp::kParams, rng);
    const auto hu = hvp(grad, theta, u);
    const auto hv = hvp(grad, theta, v);
    double vhu = 0.0, uhv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      vhu += v[i] * hu[i];
      uhv += u[i] * hv[i];
    }
    CHECK(std::abs(vhu - uhv) <= 1e-4 * std::max(std::abs(vhu), std::abs(uhv)));
  }
}

TEST_CASE("dual sweep yields exact Hessian-vector products") {
  // L = sum(tanh(x)^2 * c); check the tangent of the gradient against the
  // central-difference product.
  const std::vector<double> x0{0.3, -0.5, 1.1};
  const std::vector<double> v{1.0, 0.5, -2.0};
  Tape<Dual> t;
  std::vector<Dual> xv;
  for (std::size_t i = 0; i < 3; ++i) xv.emplace_back(x0[i], v[i]);
  Var<Dual> x = t.parameter("x", BasicTensor<Dual>(Shape{3}, xv));
  Var<Dual> c = t.constant(BasicTensor<Dual>(Shape{3}, std::vector<Dual>{1.0, 2.0, 3.0}));
  Var<Dual> th = ad::tanh(x);
  auto g = t.backward(sum(mul(mul(th, th), c)));
  const auto gx = g.at("x").values();

  auto grad = gradient_of([](Tape<double>& tp, Var<double> p) {
    Var<double> cc = tp.constant(vec({1.0, 2.0, 3.0}));
    Var<double> tt = ad::tanh(p);
    return sum(mul(mul(tt, tt), cc));
  });
  const auto hv = hvp(grad, x0, v);
  const auto plain = grad(x0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(gx[i].val == doctest::Approx(plain[i]).epsilon(1e-14));
    CHECK(gx[i].tan == doctest::Approx(hv[i]).epsilon(1e-7));
  }
}
