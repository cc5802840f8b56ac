#include "tsenas/search_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

#include "tsenas/error.hpp"

namespace tsenas {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 5> kOpTags{{
    {OpKind::Zero, "zero"},
    {OpKind::Skip, "skip"},
    {OpKind::Linear, "linear"},
    {OpKind::Conv3x3, "conv3x3"},
    {OpKind::AvgPool, "avg_pool"},
}};

std::vector<Edge> all_pairs(std::size_t first_target, std::size_t last_target) {
  std::vector<Edge> edges;
  for (std::size_t j = first_target; j <= last_target; ++j)
    for (std::size_t i = 0; i < j; ++i) edges.push_back({i, j});
  return edges;
}

}  // namespace

std::string_view op_tag(OpKind op) {
  for (const auto& [kind, tag] : kOpTags)
    if (kind == op) return tag;
  throw Error("unknown operation kind");
}

OpKind op_from_tag(std::string_view tag) {
  for (const auto& [kind, t] : kOpTags)
    if (t == tag) return kind;
  throw ConfigError("unknown operation tag '" + std::string(tag) + "'");
}

bool is_parametric(OpKind op) { return op == OpKind::Linear || op == OpKind::Conv3x3; }

CellTopology::CellTopology(std::size_t nodes, std::vector<Edge> edges,
                           std::vector<std::size_t> inputs, std::size_t output,
                           std::vector<std::size_t> output_sources)
    : nodes_(nodes),
      edges_(std::move(edges)),
      inputs_(std::move(inputs)),
      output_(output),
      output_sources_(std::move(output_sources)),
      incoming_(nodes) {
  if (nodes_ < 2) throw ConfigError("a cell needs at least two nodes");
  if (inputs_.empty()) throw ConfigError("a cell needs at least one input node");
  if (output_ >= nodes_) throw ConfigError("output node out of range");
  for (std::size_t in : inputs_) {
    if (in >= nodes_ || in == output_) throw ConfigError("invalid input node " + std::to_string(in));
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& edge = edges_[e];
    if (edge.from >= edge.to) {
      throw ConfigError("edge (" + std::to_string(edge.from) + "," + std::to_string(edge.to) +
                        ") violates i < j");
    }
    if (edge.to >= nodes_) throw ConfigError("edge endpoint out of range");
    if (is_input(edge.to)) throw ConfigError("edges may not end at an input node");
    for (std::size_t f = 0; f < e; ++f) {
      if (edges_[f] == edge) throw ConfigError("duplicate edge");
    }
    incoming_[edge.to].push_back(e);
  }
  for (std::size_t s : output_sources_) {
    if (s >= output_) throw ConfigError("output source must precede the output node");
  }

  // Reachability with every edge present.
  std::vector<bool> reach(nodes_, false);
  for (std::size_t in : inputs_) reach[in] = true;
  for (std::size_t j = 0; j < nodes_; ++j) {
    for (std::size_t e : incoming_[j])
      if (reach[edges_[e].from]) reach[j] = true;
    if (j == output_)
      for (std::size_t s : output_sources_)
        if (reach[s]) reach[j] = true;
  }
  if (!reach[output_]) throw ConfigError("output node is not reachable from the inputs");
}

bool CellTopology::is_input(std::size_t node) const {
  return std::find(inputs_.begin(), inputs_.end(), node) != inputs_.end();
}

std::size_t SearchSpace::op_index(OpKind op) const {
  return static_cast<std::size_t>(std::find(ops.begin(), ops.end(), op) - ops.begin());
}

SearchSpace make_space(std::string_view preset, InputKind input) {
  const OpKind param = input == InputKind::Image ? OpKind::Conv3x3 : OpKind::Linear;
  if (preset == "nb201-like") {
    return {std::string(preset), CellTopology(4, all_pairs(1, 3), {0}, 3),
            {OpKind::Zero, OpKind::Skip, param, OpKind::AvgPool}};
  }
  if (preset == "s2-like") {
    return {std::string(preset), CellTopology(4, all_pairs(1, 3), {0}, 3),
            {OpKind::Skip, param}};
  }
  if (preset == "darts-like") {
    std::vector<Edge> edges;
    for (std::size_t j = 2; j <= 5; ++j)
      for (std::size_t i = 0; i < j; ++i) edges.push_back({i, j});
    return {std::string(preset), CellTopology(7, std::move(edges), {0, 1}, 6, {2, 3, 4, 5}),
            {OpKind::Zero, OpKind::Skip, param, OpKind::AvgPool}};
  }
  throw ConfigError("unknown search space preset '" + std::string(preset) + "'");
}

SearchSpace make_custom_space(const nlohmann::json& config) {
  try {
    const auto nodes = config.at("nodes").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : config.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("edges must be [from, to] pairs");
      const auto from = e[0].get<long long>();
      const auto to = e[1].get<long long>();
      if (from < 0 || to < 0) throw ConfigError("negative node index");
      edges.push_back({static_cast<std::size_t>(from), static_cast<std::size_t>(to)});
    }
    auto inputs = config.value("inputs", std::vector<std::size_t>{0});
    const auto output = config.value("output", nodes - 1);
    auto sources = config.value("output_sources", std::vector<std::size_t>{});
    std::vector<OpKind> ops;
    for (const auto& tag : config.at("ops")) ops.push_back(op_from_tag(tag.get<std::string>()));
    if (ops.empty()) throw ConfigError("operation set is empty");
    for (std::size_t i = 0; i < ops.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (ops[i] == ops[j]) throw ConfigError("duplicate operation in set");
    return {"custom",
            CellTopology(nodes, std::move(edges), std::move(inputs), output, std::move(sources)),
            std::move(ops)};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed custom space: ") + e.what());
  }
}

ArchEncoding::ArchEncoding(std::size_t num_edges, std::size_t num_ops, double fill)
    : edges_(num_edges), ops_(num_ops), values_(num_edges * num_ops, fill) {
  if (num_ops == 0) throw ConfigError("empty operation set");
}

ArchEncoding::ArchEncoding(std::size_t num_edges, std::size_t num_ops, std::vector<double> values)
    : edges_(num_edges), ops_(num_ops), values_(std::move(values)) {
  if (num_ops == 0) throw ConfigError("empty operation set");
  if (values_.size() != edges_ * ops_) throw ShapeError("architecture encoding size mismatch");
  for (double v : values_)
    if (!std::isfinite(v)) throw NumericError("non-finite architecture parameter");
}

std::span<const double> ArchEncoding::edge(std::size_t e) const {
  if (e >= edges_) throw Error("edge index out of range");
  return std::span<const double>(values_).subspan(e * ops_, ops_);
}

std::span<double> ArchEncoding::edge(std::size_t e) {
  if (e >= edges_) throw Error("edge index out of range");
  return std::span<double>(values_).subspan(e * ops_, ops_);
}

std::vector<double> mixture_weights(std::span<const double> alpha_edge) {
  if (alpha_edge.empty()) throw ConfigError("mixture over an empty operation set");
  const double m = *std::max_element(alpha_edge.begin(), alpha_edge.end());
  std::vector<double> w(alpha_edge.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(alpha_edge[i] - m);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

Genotype discretize(const ArchEncoding& alpha, const SearchSpace& space, DiscretizeRule rule,
                    std::size_t k) {
  const CellTopology& topo = space.topology;
  if (alpha.num_edges() != topo.num_edges() || alpha.num_ops() != space.num_ops()) {
    throw ShapeError("architecture encoding does not cover the search space");
  }
  Genotype g;
  g.ops.reserve(topo.num_edges());
  for (std::size_t e = 0; e < topo.num_edges(); ++e) {
    const auto a = alpha.edge(e);
    // Strict comparison keeps the lowest index on ties.
    std::size_t best = 0;
    for (std::size_t o = 1; o < a.size(); ++o)
      if (a[o] > a[best]) best = o;
    g.ops.push_back(space.ops[best]);
  }
  g.retained.assign(topo.num_edges(), true);
  if (rule == DiscretizeRule::ArgmaxPerEdge) return g;

  std::vector<double> strength(topo.num_edges(), -1.0);
  for (std::size_t e = 0; e < topo.num_edges(); ++e) {
    const auto w = mixture_weights(alpha.edge(e));
    for (std::size_t o = 0; o < w.size(); ++o)
      if (space.ops[o] != OpKind::Zero) strength[e] = std::max(strength[e], w[o]);
  }
  for (std::size_t node = 0; node < topo.num_nodes(); ++node) {
    std::vector<std::size_t> in = topo.incoming(node);
    if (in.size() <= k) continue;
    std::stable_sort(in.begin(), in.end(),
                     [&](std::size_t a, std::size_t b) { return strength[a] > strength[b]; });
    for (std::size_t i = k; i < in.size(); ++i) g.retained[in[i]] = false;
  }
  return g;
}

std::size_t cell_depth(const Genotype& genotype, const CellTopology& topology) {
  if (genotype.ops.size() != topology.num_edges() ||
      genotype.retained.size() != topology.num_edges()) {
    throw ShapeError("genotype does not match topology");
  }
  constexpr long kUnreachable = std::numeric_limits<long>::min();
  std::vector<long> longest(topology.num_nodes(), kUnreachable);
  for (std::size_t in : topology.inputs()) longest[in] = 0;
  // Node order is topological.
  for (std::size_t j = 0; j < topology.num_nodes(); ++j) {
    for (std::size_t e : topology.incoming(j)) {
      if (genotype.effective(e) == OpKind::Zero) continue;
      const long from = longest[topology.edge(e).from];
      if (from != kUnreachable) longest[j] = std::max(longest[j], from + 1);
    }
    if (j == topology.output()) {
      for (std::size_t s : topology.output_sources())
        if (longest[s] != kUnreachable) longest[j] = std::max(longest[j], longest[s] + 1);
    }
  }
  const long d = longest[topology.output()];
  return d == kUnreachable ? 0 : static_cast<std::size_t>(d);
}

std::size_t skip_count(const Genotype& genotype) {
  std::size_t n = 0;
  for (std::size_t e = 0; e < genotype.ops.size(); ++e)
    if (genotype.effective(e) == OpKind::Skip) ++n;
  return n;
}

nlohmann::json genotype_to_json(const Genotype& genotype, const SearchSpace& space) {
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t e = 0; e < genotype.ops.size(); ++e) {
    if (!genotype.retained[e]) continue;
    const Edge& edge = space.topology.edge(e);
    edges.push_back({{"from", edge.from}, {"to", edge.to}, {"op", op_tag(genotype.ops[e])}});
  }
  return {{"edges", std::move(edges)}, {"topology", space.preset}};
}

Genotype genotype_from_json(const nlohmann::json& doc, const SearchSpace& space) {
  const CellTopology& topo = space.topology;
  Genotype g;
  g.ops.assign(topo.num_edges(), OpKind::Zero);
  g.retained.assign(topo.num_edges(), false);
  try {
    if (doc.at("topology").get<std::string>() != space.preset) {
      throw ConfigError("genotype topology '" + doc.at("topology").get<std::string>() +
                        "' does not match space '" + space.preset + "'");
    }
    for (const auto& item : doc.at("edges")) {
      const Edge edge{item.at("from").get<std::size_t>(), item.at("to").get<std::size_t>()};
      const auto it = std::find(topo.edges().begin(), topo.edges().end(), edge);
      if (it == topo.edges().end()) throw ConfigError("genotype edge not in topology");
      const auto e = static_cast<std::size_t>(it - topo.edges().begin());
      g.ops[e] = op_from_tag(item.at("op").get<std::string>());
      g.retained[e] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed genotype: ") + e.what());
  }
  return g;
}

}  // namespace tsenas
