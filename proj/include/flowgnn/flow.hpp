#pragma once

// Extraction of the absolute flow induced by flow attention weights and
// verification of Kirchhoff's first law.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "flowgnn/attention.hpp"
#include "flowgnn/graph.hpp"

namespace flowgnn {

// psi values per edge (aligned with the graph's edge sequence) plus the
// injections that seeded them.
struct Flow {
  std::vector<real_t> values;
  std::map<Edge, real_t> source_injections;
};

// Absolute outgoing flow for every edge leaving a source or target node.
using Injections = std::map<Edge, real_t>;

// Canonical injections for tests and reports: unit total flow per source,
// split across its outgoing edges by the given flow weights.
inline Injections default_injections(const Dag& d, const std::vector<real_t>& beta) {
  if (beta.size() != d.edges().size())
    throw ShapeError("default_injections: one weight per edge expected");
  Injections psi0;
  for (std::size_t e = 0; e < d.edges().size(); ++e) {
    const auto& [j, i] = d.edges()[e];
    if (d.graph().is_source(j) || d.graph().is_target(j)) psi0[{j, i}] = beta[e];
  }
  return psi0;
}

// Topological recursion of the flow induced by flow-normalized weights:
//   psi(j,i) = beta_ij * sum_{k in N_in(j)} psi(k,j)   for intermediate j
//   psi(j,i) = psi0(j,i)                               for j in S or T
inline Flow extract_flow(const Dag& d, const std::vector<real_t>& beta, const Injections& psi0) {
  if (beta.size() != d.edges().size())
    throw ShapeError("extract_flow: one weight per edge expected");
  const Graph& g = d.graph();
  Flow flow;
  flow.values.assign(d.edges().size(), 0);

  std::vector<real_t> inflow(static_cast<std::size_t>(d.num_nodes()), 0);
  for (node_t j : d.topo_order()) {
    const bool boundary = g.is_source(j) || g.is_target(j);
    for (node_t i : g.out_neighbors(j)) {
      const std::size_t e = g.edge_index(j, i);
      real_t psi;
      if (boundary) {
        auto it = psi0.find({j, i});
        if (it == psi0.end())
          throw std::invalid_argument("extract_flow: missing psi0 entry for edge (" +
                                      std::to_string(j) + "," + std::to_string(i) + ")");
        psi = it->second;
        flow.source_injections[{j, i}] = psi;
      } else {
        psi = beta[e] * inflow[static_cast<std::size_t>(j)];
      }
      flow.values[e] = psi;
      inflow[static_cast<std::size_t>(i)] += psi;
    }
  }
  return flow;
}

inline Flow extract_flow(const Dag& d, const EdgeWeights& beta, const Injections& psi0) {
  if (beta.mode != NormMode::flow)
    throw std::invalid_argument("extract_flow: weights must be flow-normalized");
  return extract_flow(d, beta.values.value(), psi0);
}

struct KirchhoffReport {
  std::vector<real_t> residuals;  // per node; 0 for sources/targets
  real_t max_abs_residual = 0;
};

// residual(v) = inflow(v) - outflow(v) for every node outside S and T.
inline KirchhoffReport kirchhoff_residual(const Graph& g, const std::vector<real_t>& flow_values) {
  if (flow_values.size() != g.num_edges())
    throw ShapeError("kirchhoff_residual: one flow value per edge expected");
  KirchhoffReport rep;
  rep.residuals.assign(static_cast<std::size_t>(g.num_nodes()), 0);
  for (node_t v = 0; v < g.num_nodes(); ++v) {
    if (g.is_source(v) || g.is_target(v)) continue;
    real_t r = 0;
    for (node_t u : g.in_neighbors(v)) r += flow_values[g.edge_index(u, v)];
    for (node_t u : g.out_neighbors(v)) r -= flow_values[g.edge_index(v, u)];
    rep.residuals[static_cast<std::size_t>(v)] = r;
    rep.max_abs_residual = std::max(rep.max_abs_residual, std::abs(r));
  }
  return rep;
}

inline KirchhoffReport kirchhoff_residual(const Graph& g, const Flow& flow) {
  return kirchhoff_residual(g, flow.values);
}

}  // namespace flowgnn
