#pragma once

// Conversions between library parameter bundles and the plain-array oracle
// types, plus tiny graph builders shared across test files.

#include <vector>

#include "flowgnn/dag_models.hpp"
#include "flowgnn/graph.hpp"
#include "flowgnn/tensor.hpp"
#include "oracles.hpp"

namespace helpers {

inline oracles::Mat to_mat(const flowgnn::Tensor& t) {
  oracles::Mat m(t.shape()[0], oracles::Vec(t.shape()[1]));
  for (std::size_t r = 0; r < t.shape()[0]; ++r)
    for (std::size_t c = 0; c < t.shape()[1]; ++c) m[r][c] = t.value()[r * t.shape()[1] + c];
  return m;
}

inline oracles::Vec to_vec(const flowgnn::Tensor& t) {
  return oracles::Vec(t.value().begin(), t.value().end());
}

inline oracles::GruWeights to_gru_weights(const flowgnn::GruParams& p) {
  oracles::GruWeights w;
  w.Wr = to_mat(p.Wr);
  w.Wz = to_mat(p.Wz);
  w.Wn = to_mat(p.Wn);
  w.Ur = to_mat(p.Ur);
  w.Uz = to_mat(p.Uz);
  w.Un = to_mat(p.Un);
  w.br = to_vec(p.br);
  w.bz = to_vec(p.bz);
  w.bn = to_vec(p.bn);
  return w;
}

inline oracles::Mat rows_of(const flowgnn::Matrix& m) {
  oracles::Mat out(m.rows, oracles::Vec(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m(r, c);
  return out;
}

inline oracles::Mat rows_of(const flowgnn::Tensor& t) { return to_mat(t); }

inline flowgnn::Matrix feature_matrix(const std::vector<std::vector<flowgnn::real_t>>& rows) {
  flowgnn::Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) m.set_row(r, rows[r]);
  return m;
}

// chain 0 -> 1 -> ... -> n-1 with one-dimensional features 1..n
inline flowgnn::Dag chain(flowgnn::node_t n) {
  std::vector<flowgnn::Edge> edges;
  for (flowgnn::node_t v = 0; v + 1 < n; ++v) edges.emplace_back(v, v + 1);
  flowgnn::Matrix f(static_cast<std::size_t>(n), 1);
  for (flowgnn::node_t v = 0; v < n; ++v) f(static_cast<std::size_t>(v), 0) = v + 1;
  return flowgnn::make_dag(n, std::move(edges), std::move(f));
}

// diamond 0 -> {1,2} -> 3
inline flowgnn::Dag diamond(std::size_t rho = 1) {
  flowgnn::Matrix f(4, rho);
  for (std::size_t v = 0; v < 4; ++v)
    for (std::size_t c = 0; c < rho; ++c) f(v, c) = static_cast<flowgnn::real_t>(v + c + 1);
  return flowgnn::make_dag(4, {{0, 1}, {0, 2}, {1, 3}, {2, 3}}, std::move(f));
}

// Random general DAG (not necessarily rooted): forward edges under a random
// topological position, then a random relabeling.
inline flowgnn::Dag random_dag(flowgnn::Rng& rng, flowgnn::node_t max_nodes, std::size_t rho = 2,
                               double edge_prob = 0.4) {
  const flowgnn::node_t n = static_cast<flowgnn::node_t>(rng.uniform_int(2, max_nodes));
  std::vector<flowgnn::node_t> label(static_cast<std::size_t>(n));
  for (flowgnn::node_t v = 0; v < n; ++v) label[static_cast<std::size_t>(v)] = v;
  rng.shuffle(label);
  std::vector<flowgnn::Edge> edges;
  for (flowgnn::node_t u = 0; u < n; ++u)
    for (flowgnn::node_t v = u + 1; v < n; ++v)
      if (rng.uniform() < edge_prob)
        edges.emplace_back(label[static_cast<std::size_t>(u)], label[static_cast<std::size_t>(v)]);
  flowgnn::Matrix f(static_cast<std::size_t>(n), rho);
  for (auto& x : f.data) x = static_cast<flowgnn::real_t>(rng.uniform(-1, 1));
  return flowgnn::make_dag(n, std::move(edges), std::move(f));
}

}  // namespace helpers
