#pragma once

// Graph and DAG representations, neighborhoods, topological ordering,
// reversal, computation-tree construction, and multiset utilities.

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <utility>
#include <vector>

#include "flowgnn/core.hpp"

namespace flowgnn {

using Edge = std::pair<node_t, node_t>;

// Directed graph with per-node feature vectors and declared source/target
// sets. Immutable after construction; all views are index-ordered so that
// downstream aggregation is deterministic.
class Graph {
 public:
  Graph(node_t num_nodes, std::vector<Edge> edges, Matrix features,
        std::vector<node_t> sources = {}, std::vector<node_t> targets = {})
      : num_nodes_(num_nodes),
        edges_(std::move(edges)),
        features_(std::move(features)),
        sources_(std::move(sources)),
        targets_(std::move(targets)) {
    if (features_.rows != static_cast<std::size_t>(num_nodes_))
      throw ShapeError("Graph: feature matrix must have one row per node");
    std::set<Edge> seen;
    for (const Edge& e : edges_) {
      if (e.first < 0 || e.first >= num_nodes_ || e.second < 0 || e.second >= num_nodes_)
        throw std::out_of_range("Graph: edge endpoint out of range");
      if (e.first == e.second)
        throw std::invalid_argument("Graph: self-loops are not allowed");
      if (!seen.insert(e).second)
        throw std::invalid_argument("Graph: duplicate edge");
    }
    for (node_t v : sources_)
      if (v < 0 || v >= num_nodes_) throw std::out_of_range("Graph: source out of range");
    for (node_t v : targets_)
      if (v < 0 || v >= num_nodes_) throw std::out_of_range("Graph: target out of range");
    build_adjacency();
  }

  node_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& features() const { return features_; }
  std::size_t feature_dim() const { return features_.cols; }
  const std::vector<node_t>& sources() const { return sources_; }
  const std::vector<node_t>& targets() const { return targets_; }

  bool is_source(node_t v) const {
    return std::binary_search(sorted_sources_.begin(), sorted_sources_.end(), v);
  }
  bool is_target(node_t v) const {
    return std::binary_search(sorted_targets_.begin(), sorted_targets_.end(), v);
  }

  // Incoming neighborhood of v, ascending node index.
  const std::vector<node_t>& in_neighbors(node_t v) const {
    check_node(v);
    return in_[static_cast<std::size_t>(v)];
  }

  // Outgoing neighborhood of v, ascending node index.
  const std::vector<node_t>& out_neighbors(node_t v) const {
    check_node(v);
    return out_[static_cast<std::size_t>(v)];
  }

  node_t in_degree(node_t v) const { return static_cast<node_t>(in_neighbors(v).size()); }
  node_t out_degree(node_t v) const { return static_cast<node_t>(out_neighbors(v).size()); }

  std::size_t edge_index(node_t u, node_t v) const {
    auto it = edge_index_.find({u, v});
    if (it == edge_index_.end()) throw std::invalid_argument("Graph: no such edge");
    return it->second;
  }
  bool has_edge(node_t u, node_t v) const { return edge_index_.count({u, v}) != 0; }

 private:
  void check_node(node_t v) const {
    if (v < 0 || v >= num_nodes_) throw std::out_of_range("Graph: node index out of range");
  }

  void build_adjacency() {
    in_.assign(static_cast<std::size_t>(num_nodes_), {});
    out_.assign(static_cast<std::size_t>(num_nodes_), {});
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const auto& [u, v] = edges_[i];
      out_[static_cast<std::size_t>(u)].push_back(v);
      in_[static_cast<std::size_t>(v)].push_back(u);
      edge_index_[edges_[i]] = i;
    }
    for (auto& nb : in_) std::sort(nb.begin(), nb.end());
    for (auto& nb : out_) std::sort(nb.begin(), nb.end());
    sorted_sources_ = sources_;
    sorted_targets_ = targets_;
    std::sort(sorted_sources_.begin(), sorted_sources_.end());
    std::sort(sorted_targets_.begin(), sorted_targets_.end());
  }

  node_t num_nodes_;
  std::vector<Edge> edges_;
  Matrix features_;
  std::vector<node_t> sources_;
  std::vector<node_t> targets_;
  std::vector<std::vector<node_t>> in_, out_;
  std::map<Edge, std::size_t> edge_index_;
  std::vector<node_t> sorted_sources_, sorted_targets_;
};

inline const std::vector<node_t>& in_neighbors(const Graph& g, node_t v) {
  return g.in_neighbors(v);
}
inline const std::vector<node_t>& out_neighbors(const Graph& g, node_t v) {
  return g.out_neighbors(v);
}

// A validated DAG: the underlying graph plus a topological order. Initial
// nodes are always sources and final nodes are always targets.
class Dag {
 public:
  Dag(Graph graph, std::vector<node_t> topo_order)
      : graph_(std::move(graph)), topo_order_(std::move(topo_order)) {
    const auto n = static_cast<std::size_t>(graph_.num_nodes());
    if (topo_order_.size() != n) throw std::invalid_argument("Dag: topo order has wrong length");
    std::vector<node_t> pos(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
      node_t v = topo_order_[i];
      if (v < 0 || v >= graph_.num_nodes() || pos[static_cast<std::size_t>(v)] != -1)
        throw std::invalid_argument("Dag: topo order is not a permutation");
      pos[static_cast<std::size_t>(v)] = static_cast<node_t>(i);
    }
    for (const Edge& e : graph_.edges())
      if (pos[static_cast<std::size_t>(e.first)] >= pos[static_cast<std::size_t>(e.second)])
        throw CycleError("Dag: order violates edge precedence");
    for (node_t v = 0; v < graph_.num_nodes(); ++v) {
      if (graph_.in_degree(v) == 0) initial_.push_back(v);
      if (graph_.out_degree(v) == 0) final_.push_back(v);
    }
    if (initial_.empty() || final_.empty())
      throw std::invalid_argument("Dag: needs at least one initial and one final node");
    for (node_t v : initial_)
      if (!graph_.is_source(v)) throw std::invalid_argument("Dag: initial node not in sources");
    for (node_t v : final_)
      if (!graph_.is_target(v)) throw std::invalid_argument("Dag: final node not in targets");
  }

  const Graph& graph() const { return graph_; }
  const std::vector<node_t>& topo_order() const { return topo_order_; }
  const std::vector<node_t>& initial_nodes() const { return initial_; }
  const std::vector<node_t>& final_nodes() const { return final_; }

  node_t num_nodes() const { return graph_.num_nodes(); }
  const std::vector<Edge>& edges() const { return graph_.edges(); }
  const Matrix& features() const { return graph_.features(); }

  bool is_tree() const {
    for (node_t v = 0; v < graph_.num_nodes(); ++v)
      if (graph_.out_degree(v) > 1) return false;
    return true;
  }

  node_t root() const {
    if (final_.size() != 1)
      throw MultipleRootsError("Dag: rooted operations need a unique final node");
    return final_[0];
  }

 private:
  Graph graph_;
  std::vector<node_t> topo_order_;
  std::vector<node_t> initial_, final_;
};

// Kahn's algorithm with a min-index priority queue; the produced order is
// the lexicographically smallest one and therefore deterministic.
inline Dag topo_sort(const Graph& g) {
  const auto n = static_cast<std::size_t>(g.num_nodes());
  std::vector<node_t> indeg(n, 0);
  for (const Edge& e : g.edges()) indeg[static_cast<std::size_t>(e.second)]++;

  std::priority_queue<node_t, std::vector<node_t>, std::greater<>> ready;
  for (node_t v = 0; v < g.num_nodes(); ++v)
    if (indeg[static_cast<std::size_t>(v)] == 0) ready.push(v);

  std::vector<node_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    node_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (node_t w : g.out_neighbors(v))
      if (--indeg[static_cast<std::size_t>(w)] == 0) ready.push(w);
  }
  if (order.size() != n) throw CycleError("topo_sort: graph contains a directed cycle");

  // Default the declared sources/targets to the structural ones.
  std::vector<node_t> sources = g.sources(), targets = g.targets();
  if (sources.empty())
    for (node_t v = 0; v < g.num_nodes(); ++v)
      if (g.in_degree(v) == 0) sources.push_back(v);
  if (targets.empty())
    for (node_t v = 0; v < g.num_nodes(); ++v)
      if (g.out_degree(v) == 0) targets.push_back(v);
  return Dag(Graph(g.num_nodes(), g.edges(), g.features(), sources, targets), order);
}

inline Dag make_dag(node_t num_nodes, std::vector<Edge> edges, Matrix features,
                    std::vector<node_t> sources = {}, std::vector<node_t> targets = {}) {
  return topo_sort(Graph(num_nodes, std::move(edges), std::move(features), std::move(sources),
                         std::move(targets)));
}

// Inverts every edge. Features stay put, sources and targets swap.
inline Dag reverse(const Dag& d) {
  std::vector<Edge> rev;
  rev.reserve(d.edges().size());
  for (const Edge& e : d.edges()) rev.emplace_back(e.second, e.first);
  Graph g(d.num_nodes(), std::move(rev), d.features(), d.graph().targets(), d.graph().sources());
  std::vector<node_t> order(d.topo_order().rbegin(), d.topo_order().rend());
  return Dag(std::move(g), std::move(order));
}

// Appends one virtual node fed by every former final node.
inline Dag merge_final_nodes(const Dag& d, const std::vector<real_t>& virtual_feature) {
  if (virtual_feature.size() != d.features().cols)
    throw ShapeError("merge_final_nodes: virtual feature has wrong dimension");
  const node_t virt = d.num_nodes();
  Matrix features(static_cast<std::size_t>(d.num_nodes()) + 1, d.features().cols);
  for (std::size_t i = 0; i < d.features().data.size(); ++i) features.data[i] = d.features().data[i];
  features.set_row(static_cast<std::size_t>(virt), virtual_feature);

  std::vector<Edge> edges = d.edges();
  for (node_t f : d.final_nodes()) edges.emplace_back(f, virt);
  return make_dag(virt + 1, std::move(edges), std::move(features));
}

inline Dag merge_final_nodes(const Dag& d) {
  return merge_final_nodes(d, std::vector<real_t>(d.features().cols, 0));
}

// Unrolls a rooted DAG into its computation tree: processing nodes root-
// outward, every node with n >= 2 successors is split into n copies, each
// keeping one outgoing edge and duplicating all incoming edges. Identity on
// trees (checked up front so indices are preserved exactly).
inline Dag computation_tree(const Dag& d) {
  const node_t r = d.root();  // throws MultipleRootsError when not rooted
  if (d.is_tree()) return d;

  // Mutable adjacency plus per-node feature rows; copies append new ids.
  std::vector<std::vector<node_t>> succs(static_cast<std::size_t>(d.num_nodes()));
  std::vector<std::vector<node_t>> preds(static_cast<std::size_t>(d.num_nodes()));
  std::vector<std::vector<real_t>> feats;
  feats.reserve(static_cast<std::size_t>(d.num_nodes()));
  for (node_t v = 0; v < d.num_nodes(); ++v) {
    auto out = d.graph().out_neighbors(v);
    auto in = d.graph().in_neighbors(v);
    succs[static_cast<std::size_t>(v)] = out;
    preds[static_cast<std::size_t>(v)] = in;
    feats.push_back(d.features().row(static_cast<std::size_t>(v)));
  }

  auto replace_in_list = [](std::vector<node_t>& list, node_t from, node_t to) {
    for (auto& x : list)
      if (x == from) x = to;
  };

  // Reverse topological order: root first, sources last. Descendant copies
  // already exist when a node's successor list is inspected.
  std::vector<node_t> order(d.topo_order().rbegin(), d.topo_order().rend());
  for (node_t v : order) {
    if (v == r) continue;
    auto& out = succs[static_cast<std::size_t>(v)];
    if (out.size() <= 1) continue;
    const std::vector<node_t> targets(out.begin() + 1, out.end());
    out.resize(1);
    for (node_t t : targets) {
      const node_t copy = static_cast<node_t>(feats.size());
      feats.push_back(feats[static_cast<std::size_t>(v)]);
      succs.push_back({t});
      preds.push_back(preds[static_cast<std::size_t>(v)]);
      replace_in_list(preds[static_cast<std::size_t>(t)], v, copy);
      for (node_t p : preds[static_cast<std::size_t>(copy)])
        succs[static_cast<std::size_t>(p)].push_back(copy);
    }
  }

  const node_t n = static_cast<node_t>(feats.size());
  Matrix features(static_cast<std::size_t>(n), d.features().cols);
  for (node_t v = 0; v < n; ++v) features.set_row(static_cast<std::size_t>(v), feats[static_cast<std::size_t>(v)]);
  std::vector<Edge> edges;
  for (node_t v = 0; v < n; ++v)
    for (node_t w : succs[static_cast<std::size_t>(v)]) edges.emplace_back(v, w);
  return make_dag(n, std::move(edges), std::move(features));
}

// Multiset of distinct feature vectors with positive multiplicities.
class Multiset {
 public:
  Multiset(std::vector<std::vector<real_t>> elements, std::vector<std::int64_t> multiplicities)
      : elements_(std::move(elements)), multiplicities_(std::move(multiplicities)) {
    if (elements_.size() != multiplicities_.size())
      throw std::invalid_argument("Multiset: one multiplicity per element");
    for (auto m : multiplicities_)
      if (m < 1) throw std::invalid_argument("Multiset: multiplicities must be >= 1");
    for (std::size_t i = 0; i < elements_.size(); ++i)
      for (std::size_t j = i + 1; j < elements_.size(); ++j)
        if (elements_[i] == elements_[j])
          throw std::invalid_argument("Multiset: elements must be pairwise distinct");
  }

  const std::vector<std::vector<real_t>>& elements() const { return elements_; }
  const std::vector<std::int64_t>& multiplicities() const { return multiplicities_; }
  std::size_t size() const { return elements_.size(); }

 private:
  std::vector<std::vector<real_t>> elements_;
  std::vector<std::int64_t> multiplicities_;
};

inline Multiset scale_multiset(const Multiset& x, std::int64_t k) {
  if (k < 1) throw std::invalid_argument("scale_multiset: k must be >= 1");
  std::vector<std::int64_t> m = x.multiplicities();
  for (auto& mi : m) mi *= k;
  return Multiset(x.elements(), std::move(m));
}

// True iff x2 = k * x1 for some integer k >= 1 (directional, element sets equal).
inline bool is_equally_distributed(const Multiset& x1, const Multiset& x2) {
  if (x1.size() != x2.size()) return false;
  // Match elements irrespective of their listed order.
  std::vector<std::int64_t> m1, m2;
  std::vector<bool> used(x2.size(), false);
  for (std::size_t i = 0; i < x1.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < x2.size(); ++j) {
      if (!used[j] && x1.elements()[i] == x2.elements()[j]) {
        used[j] = true;
        m1.push_back(x1.multiplicities()[i]);
        m2.push_back(x2.multiplicities()[j]);
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  if (m2[0] % m1[0] != 0) return false;
  const std::int64_t k = m2[0] / m1[0];
  if (k < 1) return false;
  for (std::size_t i = 1; i < m1.size(); ++i)
    if (m2[i] != k * m1[i]) return false;
  return true;
}

}  // namespace flowgnn
