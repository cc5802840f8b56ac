#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsenas/dual.hpp"
#include "tsenas/error.hpp"
#include "tsenas/tensor.hpp"

namespace tsenas::ad {

template <class S>
class Tape;

// Handle to a value recorded on a tape.
template <class S>
class Var {
 public:
  Var() = default;

  Tape<S>* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  const BasicTensor<S>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<S>;
  Var(Tape<S>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<S>* tape_ = nullptr;
  std::size_t index_ = 0;
};

template <class S>
using BasicGradMap = std::map<std::string, BasicTensor<S>>;
using GradMap = BasicGradMap<double>;

// Process-local counters used to check how many passes a routine performs.
struct ComputeProbe {
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
};

inline ComputeProbe& compute_probe() {
  thread_local ComputeProbe probe;
  return probe;
}

// Ordered record of primitive operations from one forward evaluation.
// Nodes are appended in evaluation order, so the record is topologically
// sorted. A tape supports a single backward sweep.
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const BasicTensor<S>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(BasicTensor<S> value) {
    return push(std::move(value), {}, false, "constant");
  }

  Var<S> parameter(std::string name, BasicTensor<S> value) {
    for (const auto& [n, idx] : params_) {
      if (n == name) throw Error("parameter '" + name + "' registered twice");
    }
    Var<S> v = push(std::move(value), {}, true, "parameter");
    params_.emplace_back(std::move(name), v.index());
    return v;
  }

  // Appends an operation result. `inputs` are the operands; the node
  // participates in the backward sweep only if one of them does.
  Var<S> record(BasicTensor<S> value, std::initializer_list<Var<S>> inputs,
                std::string_view op, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<S>>(inputs), op,
                  std::move(backward));
  }

  Var<S> record(BasicTensor<S> value, const std::vector<Var<S>>& inputs,
                std::string_view op, BackwardFn backward) {
    bool needs = false;
    for (const Var<S>& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.index()].requires_grad;
    }
    return push(std::move(value), std::move(backward), needs, op);
  }

  const BasicTensor<S>& value(Var<S> v) const {
    check_owned(v);
    return nodes_[v.index()].value;
  }

  bool requires_grad(Var<S> v) const { return nodes_[v.index()].requires_grad; }

  // Gradient buffer of a node, allocated on first touch. Only valid during
  // backward.
  BasicTensor<S>& grad(Var<S> v) {
    Node& n = nodes_[v.index()];
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
  }

  BasicGradMap<S> backward(Var<S> output, const BasicTensor<S>& seed) {
    check_owned(output);
    if (consumed_) throw Error("tape already consumed by a backward pass");
    consumed_ = true;
    const Node& out = nodes_[output.index()];
    if (seed.shape() != out.value.shape()) {
      throw ShapeError("seed shape " + shape_string(seed.shape()) +
                       " does not match output shape " +
                       shape_string(out.value.shape()));
    }
    ++compute_probe().backward_passes;
    nodes_[output.index()].grad = seed;
    for (std::size_t i = output.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.grad || !n.backward) continue;
      n.backward(*this, *n.grad);
    }
    BasicGradMap<S> result;
    for (const auto& [name, idx] : params_) {
      const Node& n = nodes_[idx];
      result.emplace(name, n.grad ? *n.grad : BasicTensor<S>(n.value.shape()));
    }
    return result;
  }

  BasicGradMap<S> backward(Var<S> output) {
    const Shape& shape = value(output).shape();
    if (numel(shape) != 1) {
      throw ShapeError("backward without seed needs a scalar output, got " +
                       shape_string(shape));
    }
    return backward(output, BasicTensor<S>(shape, S{1.0}));
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<S> value;
    std::optional<BasicTensor<S>> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<S> push(BasicTensor<S> value, BackwardFn backward, bool requires_grad,
              std::string_view op) {
    if (consumed_) throw Error("cannot record on a consumed tape");
    for (const S& x : value.values()) {
      if (!is_finite(x)) {
        throw NumericError("non-finite value produced by '" + std::string(op) + "'");
      }
    }
    nodes_.push_back(Node{std::move(value), std::nullopt,
                          requires_grad ? std::move(backward) : BackwardFn{},
                          requires_grad});
    return Var<S>(this, nodes_.size() - 1);
  }

  void check_owned(Var<S> v) const {
    if (v.tape() != this || v.index() >= nodes_.size()) {
      throw Error("variable does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
  bool consumed_ = false;
};

}  // namespace tsenas::ad
