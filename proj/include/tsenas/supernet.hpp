#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsenas/checkpoint.hpp"
#include "tsenas/data.hpp"
#include "tsenas/dual.hpp"
#include "tsenas/search_space.hpp"
#include "tsenas/tensor.hpp"

namespace tsenas {

class Supernet;

namespace detail {
template <class S>
class GraphBuilder;
}

struct SupernetConfig {
  std::size_t layers = 8;
  std::size_t width = 8;
  SearchSpace space = make_space("s2-like");
  ad::Shape input_shape{1, 1, 16};  // (H, W, C)
  int classes = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

template <class S>
struct EvalResult {
  S loss{};
  std::vector<S> grad_weights;
  std::vector<S> grad_alpha;
};

// Per-edge mixture weights given explicitly instead of through softmax(alpha).
using EdgeMixtures = std::vector<std::vector<double>>;

// Weight-sharing supernetwork: a stem, `layers` stacked cells and a linear
// classifier on spatially averaged features. Weights live here; the
// architecture encoding is passed to every evaluation and shared by all
// cells. Every evaluation is a pure function of (weights, alpha, batch).
//
// Node j of a cell computes the mean over its incoming edges of the mixed
// operation applied to the source node. Cells with output sources emit the
// mean of those nodes.
class Supernet {
 public:
  explicit Supernet(SupernetConfig config);

  const SupernetConfig& config() const { return config_; }
  const SearchSpace& space() const { return config_.space; }
  const ParamLayout& weight_layout() const { return layout_; }
  std::size_t num_weights() const { return weights_.size(); }
  std::size_t num_alpha() const;

  std::span<const double> weights() const { return weights_; }
  void set_weights(std::span<const double> w);

  ArchEncoding initial_alpha() const { return ArchEncoding::uniform(config_.space); }

  // Relaxed forward pass; returns (B, classes) logits.
  ad::Tensor forward(const ad::Tensor& inputs, const ArchEncoding& alpha) const;
  ad::Tensor forward(std::span<const double> weights, const ad::Tensor& inputs,
                     const ArchEncoding& alpha) const;
  // Forward pass with fixed per-edge mixture weights.
  ad::Tensor forward_mixed(const ad::Tensor& inputs, const EdgeMixtures& mixtures) const;
  // Only the chosen operation per edge is evaluated.
  ad::Tensor discrete_forward(const ad::Tensor& inputs, const Genotype& genotype) const;

  // Node values of every cell for fixed mixtures: result[cell][node].
  std::vector<std::vector<ad::Tensor>> node_values(const ad::Tensor& inputs,
                                                   const EdgeMixtures& mixtures) const;
  // Classifier applied to a (B, H, W, width) feature map.
  ad::Tensor classify(const ad::Tensor& features) const;
  // Stem applied to raw inputs.
  ad::Tensor stem(const ad::Tensor& inputs) const;

  double loss(std::span<const double> weights, const ArchEncoding& alpha, const Batch& batch) const;

  // One forward and one backward: loss plus gradients for weights and alpha
  // (alpha flattened edge-major). With S = ad::Dual the tangents of the
  // gradients are the Hessian-vector products along the input tangents.
  template <class S>
  EvalResult<S> evaluate(std::span<const S> weights, std::span<const S> alpha,
                         const Batch& batch) const;

  EvalResult<double> evaluate(const ArchEncoding& alpha, const Batch& batch) const {
    return evaluate<double>(weights_, alpha.flat(), batch);
  }

 private:
  template <class S>
  friend class detail::GraphBuilder;

  SupernetConfig config_;
  ParamLayout layout_;
  // Layout index of the weight tensor of op `o` on edge `e` of cell `c`;
  // the bias follows at index + 1.
  std::vector<std::vector<std::vector<std::size_t>>> op_param_;
  std::vector<double> weights_;
};

// Mean cross-entropy of (B, K) logits against labels.
double cross_entropy_loss(const ad::Tensor& logits, std::span<const int> labels);

// Mixtures that put weight 1 on the chosen operation of each edge.
EdgeMixtures one_hot_mixtures(const Genotype& genotype, const SearchSpace& space);

}  // namespace tsenas
