#pragma once

// Counterexample graph families and the discrimination experiments behind
// the expressivity claims: standard attention collapses a DAG onto its
// computation tree, flow attention tells them apart.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "flowgnn/dag_models.hpp"
#include "flowgnn/graph.hpp"

namespace flowgnn {

// ---------------------------------------------------------------------------
// Rooted-tree canonical form (AHU encoding with feature hashes)
// ---------------------------------------------------------------------------

namespace detail {
inline std::string feature_key(const Matrix& features, node_t v) {
  std::string key;
  char buf[40];
  for (std::size_t c = 0; c < features.cols; ++c) {
    std::snprintf(buf, sizeof(buf), "%a,", static_cast<double>(features(static_cast<std::size_t>(v), c)));
    key += buf;
  }
  return key;
}

inline std::string canon_subtree(const Dag& d, node_t v) {
  // Children of v in a tree rooted at the unique final node are v's
  // predecessors (all edges point toward the root).
  std::vector<std::string> child_codes;
  for (node_t u : d.graph().in_neighbors(v)) child_codes.push_back(canon_subtree(d, u));
  std::sort(child_codes.begin(), child_codes.end());
  std::string code = "(" + feature_key(d.features(), v) + "|";
  for (const auto& c : child_codes) code += c;
  return code + ")";
}
}  // namespace detail

// Canonical encoding of a rooted tree (unique final node, out-degree <= 1
// everywhere), extended with exact per-node feature keys.
inline std::string tree_canonical_form(const Dag& d) {
  if (!d.is_tree()) throw std::invalid_argument("tree_canonical_form: input is not a rooted tree");
  return detail::canon_subtree(d, d.root());
}

inline bool trees_isomorphic(const Dag& t1, const Dag& t2) {
  return tree_canonical_form(t1) == tree_canonical_form(t2);
}

// ---------------------------------------------------------------------------
// Counterexample pairs
// ---------------------------------------------------------------------------

enum class PairRelation { same_computation_tree, same_distribution_multiset };

struct GraphPair {
  Dag d1, d2;
  PairRelation relation = PairRelation::same_computation_tree;
  std::string label1, label2;
};

// The two 5- and 6-node structures whose computation trees coincide:
//   A: in -> x,  x -> y1, x -> y2,  y1 -> out, y2 -> out   (shared node)
//   B: in -> x1 -> y1 -> out,  in -> x2 -> y2 -> out       (duplicated branch)
// Operation nodes all carry the same feature, mimicking identical
// components.
inline GraphPair gen_fig1_pair(const std::vector<real_t>& in_feat,
                               const std::vector<real_t>& op_feat,
                               const std::vector<real_t>& out_feat) {
  const std::size_t rho = in_feat.size();
  if (op_feat.size() != rho || out_feat.size() != rho)
    throw ShapeError("gen_fig1_pair: all role features need the same dimension");

  Matrix fa(5, rho);
  fa.set_row(0, in_feat);
  fa.set_row(1, op_feat);
  fa.set_row(2, op_feat);
  fa.set_row(3, op_feat);
  fa.set_row(4, out_feat);
  Dag a = make_dag(5, {{0, 1}, {1, 2}, {1, 3}, {2, 4}, {3, 4}}, std::move(fa));

  Matrix fb(6, rho);
  fb.set_row(0, in_feat);
  fb.set_row(1, op_feat);
  fb.set_row(2, op_feat);
  fb.set_row(3, op_feat);
  fb.set_row(4, op_feat);
  fb.set_row(5, out_feat);
  Dag b = make_dag(6, {{0, 1}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 5}}, std::move(fb));

  return GraphPair{std::move(a), std::move(b), PairRelation::same_computation_tree,
                   "shared-node", "duplicated-branch"};
}

// ---------------------------------------------------------------------------
// Random rooted DAGs
// ---------------------------------------------------------------------------

// Node count of the computation tree without building it: each node
// appears once per path from it to the root.
inline std::size_t computation_tree_size(const Dag& d) {
  const node_t r = d.root();
  std::vector<std::size_t> paths(static_cast<std::size_t>(d.num_nodes()), 0);
  paths[static_cast<std::size_t>(r)] = 1;
  std::size_t total = 0;
  for (auto it = d.topo_order().rbegin(); it != d.topo_order().rend(); ++it) {
    const node_t v = *it;
    if (v != r)
      for (node_t w : d.graph().out_neighbors(v))
        paths[static_cast<std::size_t>(v)] += paths[static_cast<std::size_t>(w)];
    total += paths[static_cast<std::size_t>(v)];
  }
  return total;
}

// Random rooted DAG over a small feature palette. Every non-final node
// keeps at least one successor, so the final node is unique. With
// `require_true_dag`, regenerates until some node has out-degree >= 2 and
// the computation tree stays desk-sized.
inline Dag random_rooted_dag(Rng& rng, node_t max_nodes, bool require_true_dag,
                             std::size_t palette_size = 3, std::size_t rho = 3) {
  if (max_nodes < 4) throw std::invalid_argument("random_rooted_dag: max_nodes must be >= 4");
  std::vector<std::vector<real_t>> palette;
  for (std::size_t k = 0; k < palette_size; ++k) {
    std::vector<real_t> f(rho, 0);
    f[k % rho] = 1;
    f[rho - 1] = static_cast<real_t>(k + 1);
    palette.push_back(std::move(f));
  }

  for (;;) {
    const node_t n = static_cast<node_t>(rng.uniform_int(4, max_nodes));
    // Nodes are generated in topological position; the last one is the root.
    std::vector<Edge> edges;
    std::set<Edge> seen;
    for (node_t v = 0; v < n - 1; ++v) {
      const node_t num_succ = static_cast<node_t>(rng.uniform_int(1, 2));
      for (node_t s = 0; s < num_succ; ++s) {
        const node_t w = static_cast<node_t>(rng.uniform_int(v + 1, n - 1));
        if (seen.insert({v, w}).second) edges.emplace_back(v, w);
      }
    }
    Matrix features(static_cast<std::size_t>(n), rho);
    for (node_t v = 0; v < n; ++v)
      features.set_row(static_cast<std::size_t>(v),
                       palette[rng.uniform_int(static_cast<std::uint64_t>(palette.size()))]);

    Dag d = make_dag(n, std::move(edges), std::move(features));
    if (d.final_nodes().size() != 1) continue;
    if (require_true_dag) {
      if (d.is_tree()) continue;
      if (computation_tree_size(d) > 4 * static_cast<std::size_t>(max_nodes)) continue;
    }
    return d;
  }
}

inline Dag random_rooted_tree(Rng& rng, node_t max_nodes, std::size_t palette_size = 3,
                              std::size_t rho = 3) {
  if (max_nodes < 2) throw std::invalid_argument("random_rooted_tree: max_nodes must be >= 2");
  std::vector<std::vector<real_t>> palette;
  for (std::size_t k = 0; k < palette_size; ++k) {
    std::vector<real_t> f(rho, 0);
    f[k % rho] = 1;
    f[rho - 1] = static_cast<real_t>(k + 1);
    palette.push_back(std::move(f));
  }
  const node_t n = static_cast<node_t>(rng.uniform_int(2, max_nodes));
  std::vector<Edge> edges;
  // Node v < n-1 points to exactly one later node: a tree rooted at n-1.
  for (node_t v = 0; v < n - 1; ++v)
    edges.emplace_back(v, static_cast<node_t>(rng.uniform_int(v + 1, n - 1)));
  Matrix features(static_cast<std::size_t>(n), rho);
  for (node_t v = 0; v < n; ++v)
    features.set_row(static_cast<std::size_t>(v),
                     palette[rng.uniform_int(static_cast<std::uint64_t>(palette.size()))]);
  return make_dag(n, std::move(edges), std::move(features));
}

// n true DAGs paired with their computation trees; deterministic per seed.
inline std::vector<GraphPair> gen_pair_family(std::size_t n, node_t max_nodes,
                                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GraphPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng item = rng.child(i);
    Dag d = random_rooted_dag(item, max_nodes, /*require_true_dag=*/true);
    Dag tree = computation_tree(d);
    pairs.push_back(GraphPair{std::move(d), std::move(tree),
                              PairRelation::same_computation_tree, "dag", "computation-tree"});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Discrimination experiments
// ---------------------------------------------------------------------------

struct PairDiscrimination {
  double mean_distance = 0;
  double min_distance = 0;
  double separated_fraction = 0;  // fraction of seeds with distance > threshold
};

struct DiscriminationReport {
  DagModelKind model = DagModelKind::dagnn;
  double threshold = 1e-6;
  std::size_t num_seeds = 0;
  std::vector<PairDiscrimination> pairs;
  double overall_separated_fraction = 0;  // over pair x seed
  double max_distance = 0;
};

inline double embedding_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("embedding_distance: dimensions disagree");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    s += diff * diff;
  }
  return std::sqrt(s);
}

// Encodes both members of every pair under shared randomly initialized
// parameters, once per seed. Expressivity claims concern the canonical
// sequential encoder, so DAGNN/D-VAE run unidirectionally here.
inline DiscriminationReport discrimination_report(DagModelKind model, std::size_t hidden,
                                                  std::size_t num_layers,
                                                  const std::vector<GraphPair>& pairs,
                                                  std::size_t num_seeds, std::uint64_t base_seed,
                                                  double threshold = 1e-6) {
  if (pairs.empty()) throw std::invalid_argument("discrimination_report: needs pairs");
  DiscriminationReport rep;
  rep.model = model;
  rep.threshold = threshold;
  rep.num_seeds = num_seeds;
  rep.pairs.assign(pairs.size(), {});

  std::size_t separated = 0;
  std::vector<std::size_t> per_pair_separated(pairs.size(), 0);
  for (std::size_t s = 0; s < num_seeds; ++s) {
    Rng rng(base_seed + s);
    DagEncoder enc = init_dag_encoder(model, hidden, num_layers, rng, /*bidirectional=*/false);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      Tape tape;
      const double dist = embedding_distance(encode(enc, pairs[p].d1).embedding,
                                             encode(enc, pairs[p].d2).embedding);
      auto& pd = rep.pairs[p];
      pd.mean_distance += dist / static_cast<double>(num_seeds);
      if (s == 0 || dist < pd.min_distance) pd.min_distance = dist;
      if (dist > threshold) {
        ++per_pair_separated[p];
        ++separated;
      }
      rep.max_distance = std::max(rep.max_distance, dist);
    }
  }
  for (std::size_t p = 0; p < pairs.size(); ++p)
    rep.pairs[p].separated_fraction =
        static_cast<double>(per_pair_separated[p]) / static_cast<double>(num_seeds);
  rep.overall_separated_fraction =
      static_cast<double>(separated) / static_cast<double>(num_seeds * pairs.size());
  return rep;
}

}  // namespace flowgnn
