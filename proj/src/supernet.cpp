#include "tsenas/supernet.hpp"

#include <cmath>
#include <random>
#include <string>

#include "tsenas/ops.hpp"
#include "tsenas/tape.hpp"

namespace tsenas {

namespace detail {

template <class S>
ad::BasicTensor<S> lift(const ad::Tensor& t) {
  if constexpr (std::is_same_v<S, double>) {
    return t;
  } else {
    std::vector<S> v(t.values().begin(), t.values().end());
    return ad::BasicTensor<S>(t.shape(), std::move(v));
  }
}

template <class S>
struct MixPlan {
  std::vector<ad::Var<S>> weights;         // per edge, shape (|O|)
  std::vector<std::vector<bool>> active;   // ops worth evaluating per edge
};

template <class S>
class GraphBuilder {
 public:
  using Var = ad::Var<S>;

  GraphBuilder(const Supernet& net, ad::Tape<S>& tape, std::span<const S> weights, bool track)
      : net_(net), tape_(tape) {
    if (weights.size() != net.num_weights()) {
      throw ShapeError("expected " + std::to_string(net.num_weights()) + " weights, got " +
                       std::to_string(weights.size()));
    }
    for (const ParamEntry& e : net.layout_.entries()) {
      std::vector<S> v(weights.begin() + static_cast<std::ptrdiff_t>(e.offset),
                       weights.begin() + static_cast<std::ptrdiff_t>(e.offset + ad::numel(e.shape)));
      ad::BasicTensor<S> t(e.shape, std::move(v));
      w_.push_back(track ? tape.parameter(e.name, std::move(t)) : tape.constant(std::move(t)));
    }
  }

  MixPlan<S> relaxed(std::span<const S> alpha, bool track) {
    const SearchSpace& space = net_.space();
    const std::size_t ne = space.topology.num_edges();
    const std::size_t no = space.num_ops();
    if (alpha.size() != ne * no) {
      throw ShapeError("architecture encoding has " + std::to_string(alpha.size()) +
                       " entries, space needs " + std::to_string(ne * no));
    }
    MixPlan<S> plan;
    for (std::size_t e = 0; e < ne; ++e) {
      std::vector<S> a(alpha.begin() + static_cast<std::ptrdiff_t>(e * no),
                       alpha.begin() + static_cast<std::ptrdiff_t>((e + 1) * no));
      const Edge& edge = space.topology.edge(e);
      ad::BasicTensor<S> t(ad::Shape{no}, std::move(a));
      Var leaf = track ? tape_.parameter("alpha.edge" + std::to_string(edge.from) + "_" +
                                             std::to_string(edge.to),
                                         std::move(t))
                       : tape_.constant(std::move(t));
      plan.weights.push_back(ad::softmax(leaf));
      plan.active.emplace_back(no, true);
    }
    return plan;
  }

  MixPlan<S> fixed(const EdgeMixtures& mixtures) {
    const SearchSpace& space = net_.space();
    if (mixtures.size() != space.topology.num_edges()) {
      throw ShapeError("need one mixture per edge");
    }
    MixPlan<S> plan;
    for (const auto& m : mixtures) {
      if (m.size() != space.num_ops()) throw ShapeError("mixture length differs from |O|");
      std::vector<S> v(m.begin(), m.end());
      plan.weights.push_back(tape_.constant(ad::BasicTensor<S>(ad::Shape{m.size()}, std::move(v))));
      std::vector<bool> act;
      for (double x : m) act.push_back(x != 0.0);
      plan.active.push_back(std::move(act));
    }
    return plan;
  }

  Var stem(Var x) {
    const Var& kernel = w_[0];
    const Var& bias = w_[1];
    Var y = kernel.shape().size() == 2 ? ad::matmul_last(x, kernel) : ad::conv3x3(x, kernel);
    return ad::tanh(ad::add_bias(y, bias));
  }

  Var head(Var features) {
    const std::size_t n = w_.size();
    return ad::add_bias(ad::matmul_last(ad::spatial_mean(features), w_[n - 2]), w_[n - 1]);
  }

  Var edge_op(std::size_t cell, std::size_t e, std::size_t o, Var x) {
    switch (net_.space().ops[o]) {
      case OpKind::Zero:
        throw Error("zero operation has no output");
      case OpKind::Skip:
        return x;
      case OpKind::AvgPool:
        return ad::avg_pool3x3(x);
      case OpKind::Linear: {
        const std::size_t p = net_.op_param_[cell][e][o];
        return ad::tanh(ad::add_bias(ad::matmul_last(x, w_[p]), w_[p + 1]));
      }
      case OpKind::Conv3x3: {
        const std::size_t p = net_.op_param_[cell][e][o];
        return ad::tanh(ad::add_bias(ad::conv3x3(x, w_[p]), w_[p + 1]));
      }
    }
    throw Error("unknown operation");
  }

  Var zeros_like(const Var& x) { return tape_.constant(ad::BasicTensor<S>(x.shape())); }

  // Runs all cells; optionally records node values per cell.
  Var logits(const ad::Tensor& inputs, const MixPlan<S>& plan,
             std::vector<std::vector<Var>>* trace = nullptr) {
    const SupernetConfig& cfg = net_.config();
    const CellTopology& topo = cfg.space.topology;
    const ad::Shape& in = cfg.input_shape;
    if (inputs.rank() != 4 || inputs.dim(1) != in[0] || inputs.dim(2) != in[1] ||
        inputs.dim(3) != in[2]) {
      throw ShapeError("input batch " + ad::shape_string(inputs.shape()) +
                       " does not match configured sample shape " + ad::shape_string(in));
    }
    Var x0 = stem(tape_.constant(lift<S>(inputs)));
    const std::size_t m = topo.inputs().size();
    std::vector<Var> history(m, x0);
    for (std::size_t c = 0; c < cfg.layers; ++c) {
      std::vector<Var> nodes(topo.num_nodes());
      std::vector<bool> ready(topo.num_nodes(), false);
      for (std::size_t k = 0; k < m; ++k) {
        nodes[topo.inputs()[k]] = history[history.size() - m + k];
        ready[topo.inputs()[k]] = true;
      }
      for (std::size_t j = 0; j < topo.num_nodes(); ++j) {
        if (ready[j]) continue;
        if (j == topo.output() && !topo.output_sources().empty()) continue;
        const auto& incoming = topo.incoming(j);
        std::vector<Var> terms;
        for (std::size_t e : incoming) {
          const Var src = nodes[topo.edge(e).from];
          std::vector<Var> outs;
          std::vector<std::size_t> which;
          for (std::size_t o = 0; o < cfg.space.num_ops(); ++o) {
            if (!plan.active[e][o] || cfg.space.ops[o] == OpKind::Zero) continue;
            outs.push_back(edge_op(c, e, o, src));
            which.push_back(o);
          }
          if (!outs.empty()) terms.push_back(ad::mix(outs, plan.weights[e], which));
        }
        nodes[j] = terms.empty() ? zeros_like(x0) : sum_scaled(terms, incoming.size());
        ready[j] = true;
      }
      if (!topo.output_sources().empty()) {
        std::vector<Var> srcs;
        for (std::size_t s : topo.output_sources()) srcs.push_back(nodes[s]);
        nodes[topo.output()] = sum_scaled(srcs, srcs.size());
      }
      if (trace) trace->push_back(nodes);
      history.push_back(ad::normalize_last(nodes[topo.output()], 1e-2));
    }
    return head(history.back());
  }

  Var sum_scaled(const std::vector<Var>& terms, std::size_t divisor) {
    Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return divisor == 1 ? acc : ad::scale(acc, 1.0 / static_cast<double>(divisor));
  }

  const std::vector<Var>& weight_vars() const { return w_; }

 private:
  const Supernet& net_;
  ad::Tape<S>& tape_;
  std::vector<Var> w_;
};

}  // namespace detail

void SupernetConfig::validate() const {
  if (layers < 1) throw ConfigError("supernet needs at least one layer");
  if (width < 1) throw ConfigError("supernet width must be positive");
  if (classes < 2) throw ConfigError("supernet needs at least two classes");
  if (input_shape.size() != 3 || ad::numel(input_shape) == 0) {
    throw ConfigError("input shape must be (H, W, C) with positive extents");
  }
  if (space.ops.empty()) throw ConfigError("empty operation set");
}

Supernet::Supernet(SupernetConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t c = config_.width;
  const ad::Shape& in = config_.input_shape;
  const bool vector_input = in[0] == 1 && in[1] == 1;
  std::vector<double> fan_in;
  auto add = [&](const std::string& name, ad::Shape shape, double fan) {
    layout_.add(name, std::move(shape));
    fan_in.push_back(fan);
  };
  if (vector_input) {
    add("stem.weight", {in[2], c}, static_cast<double>(in[2]));
  } else {
    add("stem.weight", {3, 3, in[2], c}, 9.0 * static_cast<double>(in[2]));
  }
  add("stem.bias", {c}, fan_in.back());

  const CellTopology& topo = config_.space.topology;
  op_param_.assign(config_.layers,
                   std::vector<std::vector<std::size_t>>(
                       topo.num_edges(), std::vector<std::size_t>(config_.space.num_ops(), 0)));
  for (std::size_t cell = 0; cell < config_.layers; ++cell) {
    for (std::size_t e = 0; e < topo.num_edges(); ++e) {
      const Edge& edge = topo.edge(e);
      for (std::size_t o = 0; o < config_.space.num_ops(); ++o) {
        const OpKind op = config_.space.ops[o];
        if (!is_parametric(op)) continue;
        const std::string base = "cell" + std::to_string(cell) + ".edge" +
                                 std::to_string(edge.from) + "_" + std::to_string(edge.to) + "." +
                                 std::string(op_tag(op));
        op_param_[cell][e][o] = layout_.size();
        if (op == OpKind::Linear) {
          add(base + ".weight", {c, c}, static_cast<double>(c));
        } else {
          add(base + ".weight", {3, 3, c, c}, 9.0 * static_cast<double>(c));
        }
        add(base + ".bias", {c}, fan_in.back());
      }
    }
  }
  add("head.weight", {c, static_cast<std::size_t>(config_.classes)}, static_cast<double>(c));
  add("head.bias", {static_cast<std::size_t>(config_.classes)}, static_cast<double>(c));

  std::mt19937_64 rng(config_.seed);
  weights_.reserve(layout_.total());
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const double bound = 1.0 / std::sqrt(fan_in[i]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t k = 0; k < ad::numel(layout_.at(i).shape); ++k) weights_.push_back(dist(rng));
  }
}

std::size_t Supernet::num_alpha() const {
  return config_.space.topology.num_edges() * config_.space.num_ops();
}

void Supernet::set_weights(std::span<const double> w) {
  if (w.size() != weights_.size()) throw ShapeError("weight vector size mismatch");
  for (double x : w)
    if (!std::isfinite(x)) throw NumericError("non-finite weight");
  weights_.assign(w.begin(), w.end());
}

ad::Tensor Supernet::forward(const ad::Tensor& inputs, const ArchEncoding& alpha) const {
  return forward(weights_, inputs, alpha);
}

ad::Tensor Supernet::forward(std::span<const double> weights, const ad::Tensor& inputs,
                             const ArchEncoding& alpha) const {
  ++ad::compute_probe().forward_passes;
  ad::Tape<double> tape;
  detail::GraphBuilder<double> g(*this, tape, weights, false);
  return g.logits(inputs, g.relaxed(alpha.flat(), false)).value();
}

ad::Tensor Supernet::forward_mixed(const ad::Tensor& inputs, const EdgeMixtures& mixtures) const {
  ++ad::compute_probe().forward_passes;
  ad::Tape<double> tape;
  detail::GraphBuilder<double> g(*this, tape, weights_, false);
  return g.logits(inputs, g.fixed(mixtures)).value();
}

ad::Tensor Supernet::discrete_forward(const ad::Tensor& inputs, const Genotype& genotype) const {
  if (genotype.ops.size() != config_.space.topology.num_edges()) {
    throw ShapeError("genotype does not match the topology");
  }
  return forward_mixed(inputs, one_hot_mixtures(genotype, config_.space));
}

std::vector<std::vector<ad::Tensor>> Supernet::node_values(const ad::Tensor& inputs,
                                                           const EdgeMixtures& mixtures) const {
  ad::Tape<double> tape;
  detail::GraphBuilder<double> g(*this, tape, weights_, false);
  std::vector<std::vector<ad::Var<double>>> trace;
  g.logits(inputs, g.fixed(mixtures), &trace);
  std::vector<std::vector<ad::Tensor>> out;
  for (const auto& cell : trace) {
    auto& row = out.emplace_back();
    for (const auto& v : cell) row.push_back(v.value());
  }
  return out;
}

ad::Tensor Supernet::classify(const ad::Tensor& features) const {
  ad::Tape<double> tape;
  detail::GraphBuilder<double> g(*this, tape, weights_, false);
  return g.head(tape.constant(features)).value();
}

ad::Tensor Supernet::stem(const ad::Tensor& inputs) const {
  ad::Tape<double> tape;
  detail::GraphBuilder<double> g(*this, tape, weights_, false);
  return g.stem(tape.constant(inputs)).value();
}

double Supernet::loss(std::span<const double> weights, const ArchEncoding& alpha,
                      const Batch& batch) const {
  return cross_entropy_loss(forward(weights, batch.inputs, alpha), batch.labels);
}

template <class S>
EvalResult<S> Supernet::evaluate(std::span<const S> weights, std::span<const S> alpha,
                                 const Batch& batch) const {
  ++ad::compute_probe().forward_passes;
  ad::Tape<S> tape;
  detail::GraphBuilder<S> g(*this, tape, weights, true);
  const auto plan = g.relaxed(alpha, true);
  ad::Var<S> loss = ad::cross_entropy(g.logits(batch.inputs, plan), std::span<const int>(batch.labels));
  EvalResult<S> out;
  out.loss = loss.value().item();
  const auto grads = tape.backward(loss);
  out.grad_weights.reserve(weights.size());
  for (const ParamEntry& e : layout_.entries()) {
    const auto gv = grads.at(e.name).values();
    out.grad_weights.insert(out.grad_weights.end(), gv.begin(), gv.end());
  }
  const CellTopology& topo = config_.space.topology;
  out.grad_alpha.reserve(alpha.size());
  for (const Edge& edge : topo.edges()) {
    const auto gv =
        grads.at("alpha.edge" + std::to_string(edge.from) + "_" + std::to_string(edge.to)).values();
    out.grad_alpha.insert(out.grad_alpha.end(), gv.begin(), gv.end());
  }
  return out;
}

template EvalResult<double> Supernet::evaluate<double>(std::span<const double>,
                                                      std::span<const double>, const Batch&) const;
template EvalResult<ad::Dual> Supernet::evaluate<ad::Dual>(std::span<const ad::Dual>,
                                                          std::span<const ad::Dual>,
                                                          const Batch&) const;

double cross_entropy_loss(const ad::Tensor& logits, std::span<const int> labels) {
  ad::Tape<double> tape;
  return ad::cross_entropy(tape.constant(logits), labels).value().item();
}

EdgeMixtures one_hot_mixtures(const Genotype& genotype, const SearchSpace& space) {
  EdgeMixtures m(genotype.ops.size(), std::vector<double>(space.num_ops(), 0.0));
  for (std::size_t e = 0; e < genotype.ops.size(); ++e) {
    const OpKind op = genotype.effective(e);
    const std::size_t o = space.op_index(op);
    if (o < space.num_ops()) m[e][o] = 1.0;
  }
  return m;
}

}  // namespace tsenas
