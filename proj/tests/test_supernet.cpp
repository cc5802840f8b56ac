#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "tsenas/autodiff.hpp"
#include "tsenas/error.hpp"
#include "tsenas/supernet.hpp"

using namespace tsenas;
using nlohmann::json;
using tsenas::testing::max_rel_err;
using tsenas::testing::uniform_vec;

namespace {

SupernetConfig vector_config(const SearchSpace& space, std::size_t layers, std::size_t width,
                             std::size_t d, int classes, std::uint64_t seed = 0) {
  SupernetConfig cfg;
  cfg.layers = layers;
  cfg.width = width;
  cfg.space = space;
  cfg.input_shape = {1, 1, d};
  cfg.classes = classes;
  cfg.seed = seed;
  return cfg;
}

ad::Tensor random_inputs(std::size_t b, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::Tensor({b, 1, 1, d}, uniform_vec(b * d, rng, -1.5, 1.5));
}

double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Straight-line reimplementations on (B, 1, 1, C) data.
struct Oracle {
  const Supernet& net;

  std::span<const double> param(const std::string& name) const {
    const ParamEntry& e = net.weight_layout().find(name);
    return net.weights().subspan(e.offset, ad::numel(e.shape));
  }

  std::vector<double> stem(const ad::Tensor& x) const {
    const auto w = param("stem.weight"), b = param("stem.bias");
    const std::size_t rows = x.dim(0), d = x.dim(3), c = b.size();
    std::vector<double> y(rows * c);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        double a = b[j];
        for (std::size_t i = 0; i < d; ++i) a += x[r * d + i] * w[i * c + j];
        y[r * c + j] = std::tanh(a);
      }
    return y;
  }

  static std::vector<double> normalize(std::vector<double> v, std::size_t c) {
    for (std::size_t r = 0; r < v.size() / c; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t k = 0; k < c; ++k) mu += v[r * c + k];
      mu /= static_cast<double>(c);
      for (std::size_t k = 0; k < c; ++k) var += (v[r * c + k] - mu) * (v[r * c + k] - mu);
      const double inv = 1.0 / std::sqrt(var / static_cast<double>(c) + 1e-2);
      for (std::size_t k = 0; k < c; ++k) v[r * c + k] = (v[r * c + k] - mu) * inv;
    }
    return v;
  }

  std::vector<double> head(const std::vector<double>& f, std::size_t c) const {
    const auto w = param("head.weight"), b = param("head.bias");
    const std::size_t k = b.size(), rows = f.size() / c;
    std::vector<double> z(rows * k);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        double a = b[j];
        for (std::size_t i = 0; i < c; ++i) a += f[r * c + i] * w[i * k + j];
        z[r * k + j] = a;
      }
    return z;
  }
};

double scalar_cross_entropy(const ad::Tensor& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double m = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits[r * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits[r * k + j] - m);
    total += m + std::log(s) - logits[r * k + static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(b);
}

ArchEncoding saturated(const SearchSpace& sp, const std::vector<std::size_t>& choice) {
  ArchEncoding a(sp.topology.num_edges(), sp.num_ops(), -40.0);
  for (std::size_t e = 0; e < choice.size(); ++e) a.edge(e)[choice[e]] = 40.0;
  return a;
}

}  // namespace

TEST_CASE("parameter count matches shape arithmetic") {
  const Supernet net(vector_config(make_space("s2-like"), 1, 4, 16, 4));
  // stem 16*4+4, six linear edges of 4*4+4, head 4*4+4
  CHECK(net.num_weights() == 68 + 6 * 20 + 20);
  CHECK(net.num_alpha() == 12);
  CHECK(net.weight_layout().total() == net.num_weights());

  const Supernet deep(vector_config(make_space("nb201-like"), 3, 5, 7, 3));
  CHECK(deep.num_weights() == (7 * 5 + 5) + 3 * 6 * (25 + 5) + (5 * 3 + 3));

  SupernetConfig img = vector_config(make_space("s2-like", InputKind::Image), 1, 2, 1, 2);
  img.input_shape = {4, 4, 1};
  CHECK(Supernet(img).num_weights() == (9 * 2 + 2) + 6 * (9 * 4 + 2) + (2 * 2 + 2));
}

TEST_CASE("initialization is seeded and bounded") {
  const SearchSpace sp = make_space("s2-like");
  const Supernet a(vector_config(sp, 2, 4, 6, 3, 9)), b(vector_config(sp, 2, 4, 6, 3, 9));
  const Supernet c(vector_config(sp, 2, 4, 6, 3, 10));
  CHECK(std::equal(a.weights().begin(), a.weights().end(), b.weights().begin()));
  CHECK_FALSE(std::equal(a.weights().begin(), a.weights().end(), c.weights().begin()));
  for (const ParamEntry& e : a.weight_layout().entries()) {
    const double bound = e.name == "stem.weight" || e.name == "stem.bias" ? 1.0 / std::sqrt(6.0) : 0.5;
    for (double w : a.weights().subspan(e.offset, ad::numel(e.shape))) CHECK(std::abs(w) <= bound);
  }
}

TEST_CASE("invalid configurations are rejected") {
  const SearchSpace sp = make_space("s2-like");
  CHECK_THROWS_AS(Supernet(vector_config(sp, 0, 4, 6, 3)), ConfigError);
  CHECK_THROWS_AS(Supernet(vector_config(sp, 1, 0, 6, 3)), ConfigError);
  CHECK_THROWS_AS(Supernet(vector_config(sp, 1, 4, 6, 1)), ConfigError);

  Supernet net(vector_config(sp, 1, 4, 6, 3));
  CHECK_THROWS_AS(net.forward(random_inputs(2, 5, 0), net.initial_alpha()), ShapeError);
  CHECK_THROWS(net.forward(random_inputs(2, 6, 0), ArchEncoding(5, 2)));
  CHECK_THROWS_AS(net.set_weights(std::vector<double>(3)), ShapeError);
}

TEST_CASE("skip-dominated passthrough cell reduces to stem, normalization and head") {
  const SearchSpace pass = make_custom_space(
      json{{"nodes", 2}, {"edges", {{0, 1}}}, {"inputs", {0}}, {"output", 1}, {"ops", {"skip", "linear"}}});
  const Supernet net(vector_config(pass, 1, 4, 3, 3, 2));
  const ad::Tensor x = random_inputs(5, 3, 4);
  const Oracle o{net};
  const auto expected = o.head(Oracle::normalize(o.stem(x), 4), 4);
  const ad::Tensor logits = net.forward(x, saturated(pass, {0}));
  REQUIRE(logits.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(logits[i] - expected[i]) <= 1e-9);
}

TEST_CASE("uniform mixture of zero and skip halves the input") {
  const SearchSpace zs = make_custom_space(
      json{{"nodes", 2}, {"edges", {{0, 1}}}, {"inputs", {0}}, {"output", 1}, {"ops", {"zero", "skip"}}});
  const Supernet net(vector_config(zs, 1, 3, 2, 2));
  const ad::Tensor x = random_inputs(4, 2, 1);
  const auto nodes = net.node_values(x, {{0.5, 0.5}});
  const std::vector<double> s = Oracle{net}.stem(x);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(nodes[0][1][i] - 0.5 * s[i]) <= 1e-15);
  CHECK(max_abs_diff(net.forward(x, ArchEncoding(1, 2)), net.forward_mixed(x, {{0.5, 0.5}})) <= 1e-15);
}

TEST_CASE("node values are linear in each edge's mixture") {
  const SearchSpace nb = make_space("nb201-like");
  const Supernet net(vector_config(nb, 2, 4, 5, 3, 6));
  const ad::Tensor x = random_inputs(3, 5, 2);
  std::mt19937_64 rng(5);
  EdgeMixtures base(6);
  for (auto& m : base) {
    const auto r = uniform_vec(4, rng, 0.0, 1.0);
    double s = 0.0;
    for (double v : r) s += v;
    for (double v : r) m.push_back(v / s);
  }
  for (std::size_t e = 0; e < 6; ++e) {
    const std::size_t j = nb.topology.edge(e).to;
    EdgeMixtures mu = base, mv = base, mix = base;
    mu[e] = {0.0, 0.0, 1.0, 0.0};
    mv[e] = {0.0, 1.0, 0.0, 0.0};
    const double lam = 0.3;
    for (std::size_t o = 0; o < 4; ++o) mix[e][o] = lam * mu[e][o] + (1 - lam) * mv[e][o];
    const auto nu = net.node_values(x, mu), nv = net.node_values(x, mv), nm = net.node_values(x, mix);
    for (std::size_t i = 0; i < nm[0][j].size(); ++i)
      CHECK(std::abs(nm[0][j][i] - (lam * nu[0][j][i] + (1 - lam) * nv[0][j][i])) <= 1e-12);
  }
}

TEST_CASE("zeroing one incoming edge removes exactly its contribution") {
  const SearchSpace nb = make_space("nb201-like");
  const Supernet net(vector_config(nb, 1, 4, 5, 3, 8));
  const ad::Tensor x = random_inputs(3, 5, 9);
  const EdgeMixtures full(6, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const std::size_t j = 3;
  const auto& in = nb.topology.incoming(j);
  for (std::size_t e : in) {
    EdgeMixtures without = full, only = full;
    without[e].assign(4, 0.0);
    for (std::size_t f : in)
      if (f != e) only[f].assign(4, 0.0);
    const auto a = net.node_values(x, full)[0][j];
    const auto b = net.node_values(x, without)[0][j];
    const auto c = net.node_values(x, only)[0][j];
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs((a[i] - b[i]) - c[i]) <= 1e-10);
  }
}

TEST_CASE("cross-entropy loss") {
  const ad::Tensor uniform({3, 5}, std::vector<double>(15, 0.7));
  CHECK(std::abs(cross_entropy_loss(uniform, std::vector<int>{0, 3, 4}) - std::log(5.0)) <= 1e-14);

  const ad::Tensor sure({2, 3}, {60.0, -60.0, -60.0, -60.0, -60.0, 60.0});
  CHECK(cross_entropy_loss(sure, std::vector<int>{0, 2}) < 1e-40);

  std::mt19937_64 rng(1);
  const ad::Tensor logits({6, 4}, uniform_vec(24, rng, -4.0, 4.0));
  const std::vector<int> labels{0, 1, 2, 3, 2, 1};
  CHECK(std::abs(cross_entropy_loss(logits, labels) - scalar_cross_entropy(logits, labels)) <= 1e-12);
  CHECK_THROWS(cross_entropy_loss(logits, std::vector<int>{0, 1, 2, 3, 4, 1}));
}

TEST_CASE("discrete forward") {
  const SearchSpace nb = make_space("nb201-like");
  const Supernet net(vector_config(nb, 2, 4, 5, 3, 3));
  const ad::Tensor x = random_inputs(4, 5, 3);

  const std::vector<std::size_t> choice{2, 1, 3, 2, 0, 1};
  const ArchEncoding a = saturated(nb, choice);
  const Genotype g = discretize(a, nb);
  CHECK(max_abs_diff(net.discrete_forward(x, g), net.forward(x, a)) <= 1e-6);

  const Genotype zeros{std::vector<OpKind>(6, OpKind::Zero), std::vector<bool>(6, true)};
  const ad::Tensor z = net.discrete_forward(x, zeros);
  const ad::Tensor expect = net.classify(ad::Tensor({4, 1, 1, 4}));
  CHECK(max_abs_diff(z, expect) <= 1e-15);
}

TEST_CASE("all-skip s2 network composes normalizations of the stem") {
  const SearchSpace s2 = make_space("s2-like");
  const Supernet net(vector_config(s2, 3, 4, 5, 3, 4));
  const ad::Tensor x = random_inputs(4, 5, 8);
  const Genotype skips{std::vector<OpKind>(6, OpKind::Skip), std::vector<bool>(6, true)};
  const Oracle o{net};
  auto f = o.stem(x);
  for (int c = 0; c < 3; ++c) f = Oracle::normalize(f, 4);
  const auto expected = o.head(f, 4);
  const ad::Tensor got = net.discrete_forward(x, skips);
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(got[i] - expected[i]) <= 1e-12);
  CHECK(max_abs_diff(got, net.discrete_forward(x, skips)) == 0.0);
}

TEST_CASE("evaluation is pure in weights and alpha") {
  const SearchSpace s2 = make_space("s2-like");
  const Supernet net(vector_config(s2, 2, 4, 5, 3, 5));
  const std::vector<double> w0(net.weights().begin(), net.weights().end());
  const Batch batch{random_inputs(6, 5, 2), {0, 1, 2, 0, 1, 2}};
  ArchEncoding a1(6, 2, 0.0), a2(6, 2, 0.0);
  a2.edge(3)[1] = 1.5;
  const auto r1 = net.evaluate(a1, batch);
  const auto r2 = net.evaluate(a2, batch);
  const auto r1b = net.evaluate(a1, batch);
  CHECK(r1.loss == r1b.loss);
  CHECK(r1.grad_alpha == r1b.grad_alpha);
  CHECK(r1.loss != r2.loss);
  CHECK(std::equal(w0.begin(), w0.end(), net.weights().begin()));

  double norm = 0.0;
  for (double g : r1.grad_alpha) norm += std::abs(g);
  CHECK(norm > 0.0);
}

TEST_CASE("supernet gradients match finite differences") {
  const SearchSpace nb = make_space("nb201-like");
  const Supernet net(vector_config(nb, 2, 3, 4, 3, 12));
  const Batch batch{random_inputs(5, 4, 13), {0, 1, 2, 1, 0}};
  std::mt19937_64 rng(14);
  ArchEncoding a(6, 4, uniform_vec(24, rng, -1.0, 1.0));
  const auto r = net.evaluate(a, batch);

  const auto fa = tsenas::testing::fd_gradient(
      [&](std::span<const double> p) {
        return net.loss(net.weights(), ArchEncoding(6, 4, std::vector<double>(p.begin(), p.end())), batch);
      },
      a.flat(), 1e-6);
  CHECK(max_rel_err(r.grad_alpha, fa, 1e-7) < 1e-5);

  const auto fw = tsenas::testing::fd_gradient(
      [&](std::span<const double> w) { return net.loss(w, a, batch); }, net.weights(), 1e-6);
  CHECK(max_rel_err(r.grad_weights, fw, 1e-7) < 1e-5);
}

TEST_CASE("normalize_last gradient") {
  std::mt19937_64 rng(21);
  const auto theta = uniform_vec(12, rng, -2.0, 2.0);
  const auto probe = uniform_vec(12, rng, -1.0, 1.0);
  auto build = [&](ad::Tape<double>& t, ad::Var<double> th) {
    ad::Var<double> y = ad::normalize_last(ad::reshape(th, {3, 4}), 1e-2);
    ad::Var<double> p = t.constant(ad::Tensor({3, 4}, probe));
    return ad::add(ad::dot(ad::reshape(ad::mul(y, p), {12}), ad::reshape(ad::tanh(y), {12})),
                   ad::scale(ad::sum(y), 0.3));
  };
  const auto vg = ad::value_and_grad(build, theta);
  const auto fd = tsenas::testing::fd_gradient(
      [&](std::span<const double> th) { return ad::value_and_grad(build, th).value; }, theta, 1e-6);
  CHECK(max_rel_err(vg.grad, fd, 1e-7) < 1e-6);

  ad::Tape<double> t;
  const auto y = ad::normalize_last(t.constant(ad::Tensor({2, 4}, {1, 2, 3, 4, -1, 0, 0, 5})), 0.0);
  for (std::size_t r = 0; r < 2; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t k = 0; k < 4; ++k) mu += y.value()[r * 4 + k];
    for (std::size_t k = 0; k < 4; ++k) var += y.value()[r * 4 + k] * y.value()[r * 4 + k];
    CHECK(std::abs(mu) <= 1e-12);
    CHECK(std::abs(var / 4.0 - 1.0) <= 1e-12);
  }
}

TEST_CASE("one-hot mixtures") {
  const SearchSpace nb = make_space("nb201-like");
  Genotype g{{OpKind::Skip, OpKind::Zero, OpKind::AvgPool, OpKind::Linear, OpKind::Skip, OpKind::Skip},
             std::vector<bool>(6, true)};
  g.retained[5] = false;
  const EdgeMixtures m = one_hot_mixtures(g, nb);
  CHECK(m[0] == std::vector<double>{0, 1, 0, 0});
  CHECK(m[2] == std::vector<double>{0, 0, 0, 1});
  CHECK(m[3] == std::vector<double>{0, 0, 1, 0});
  CHECK(m[5] == std::vector<double>{1, 0, 0, 0});
}
