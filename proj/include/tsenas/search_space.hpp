#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tsenas {

enum class OpKind { Zero, Skip, Linear, Conv3x3, AvgPool };

std::string_view op_tag(OpKind op);
OpKind op_from_tag(std::string_view tag);
bool is_parametric(OpKind op);

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Cell DAG. Node indices are a topological order: every searchable edge
// goes from a lower to a higher index. `output_sources`, when non-empty,
// lists nodes that feed the output node through fixed (non-searchable)
// connections, as in cells whose output aggregates all intermediate nodes.
class CellTopology {
 public:
  CellTopology(std::size_t nodes, std::vector<Edge> edges, std::vector<std::size_t> inputs,
               std::size_t output, std::vector<std::size_t> output_sources = {});

  std::size_t num_nodes() const { return nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::size_t e) const { return edges_.at(e); }
  const std::vector<std::size_t>& inputs() const { return inputs_; }
  std::size_t output() const { return output_; }
  const std::vector<std::size_t>& output_sources() const { return output_sources_; }
  bool is_input(std::size_t node) const;
  // Indices of searchable edges ending at `node`.
  const std::vector<std::size_t>& incoming(std::size_t node) const { return incoming_.at(node); }

 private:
  std::size_t nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> inputs_;
  std::size_t output_;
  std::vector<std::size_t> output_sources_;
  std::vector<std::vector<std::size_t>> incoming_;
};

enum class InputKind { Vector, Image };

struct SearchSpace {
  std::string preset;
  CellTopology topology;
  std::vector<OpKind> ops;

  std::size_t num_ops() const { return ops.size(); }
  // Index of `op` in the operation set, or num_ops() if absent.
  std::size_t op_index(OpKind op) const;
};

// Presets: "nb201-like", "s2-like", "darts-like". The parametric operation
// is Linear for vector inputs and Conv3x3 for image inputs.
SearchSpace make_space(std::string_view preset, InputKind input = InputKind::Vector);

// Custom space from a config document:
//   {"nodes": 4, "edges": [[0,1], ...], "inputs": [0], "output": 3,
//    "output_sources": [], "ops": ["skip", "linear"]}
SearchSpace make_custom_space(const nlohmann::json& config);

// Architecture parameters: one real vector of length |O| per edge.
class ArchEncoding {
 public:
  ArchEncoding() = default;
  ArchEncoding(std::size_t num_edges, std::size_t num_ops, double fill = 0.0);
  ArchEncoding(std::size_t num_edges, std::size_t num_ops, std::vector<double> values);

  static ArchEncoding uniform(const SearchSpace& space) {
    return ArchEncoding(space.topology.num_edges(), space.num_ops());
  }

  std::size_t num_edges() const { return edges_; }
  std::size_t num_ops() const { return ops_; }
  std::span<const double> edge(std::size_t e) const;
  std::span<double> edge(std::size_t e);
  std::span<const double> flat() const { return values_; }
  std::span<double> flat() { return values_; }

  friend bool operator==(const ArchEncoding&, const ArchEncoding&) = default;

 private:
  std::size_t edges_ = 0;
  std::size_t ops_ = 0;
  std::vector<double> values_;
};

// Softmax over one edge's architecture weights.
std::vector<double> mixture_weights(std::span<const double> alpha_edge);

// Discrete architecture: one operation per edge plus a retention mask.
// Non-retained edges behave as Zero.
struct Genotype {
  std::vector<OpKind> ops;
  std::vector<bool> retained;

  OpKind effective(std::size_t e) const { return retained.at(e) ? ops.at(e) : OpKind::Zero; }
  friend bool operator==(const Genotype&, const Genotype&) = default;
};

enum class DiscretizeRule { ArgmaxPerEdge, TopKEdges };

// Argmax per edge with ties going to the lowest operation index. TopKEdges
// additionally keeps, per non-input node, the k incoming edges whose largest
// non-Zero mixture weight is highest (ties to the lower edge index).
Genotype discretize(const ArchEncoding& alpha, const SearchSpace& space,
                    DiscretizeRule rule = DiscretizeRule::ArgmaxPerEdge, std::size_t k = 2);

// Longest input-to-output path (edge count) after deleting Zero edges. Skip
// edges count as length one. Returns 0 when the output is unreachable.
std::size_t cell_depth(const Genotype& genotype, const CellTopology& topology);

std::size_t skip_count(const Genotype& genotype);

nlohmann::json genotype_to_json(const Genotype& genotype, const SearchSpace& space);
Genotype genotype_from_json(const nlohmann::json& doc, const SearchSpace& space);

}  // namespace tsenas
