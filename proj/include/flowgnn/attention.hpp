#pragma once

// Edge scoring functions (GAT, GATv2, TransformerConv) and the two softmax
// normalization modes: standard (over a node's incoming edges) and flow
// (over the sender's outgoing edges), composed into a message-passing layer.

#include <cmath>
#include <string>
#include <vector>

#include "flowgnn/graph.hpp"
#include "flowgnn/tensor.hpp"

namespace flowgnn {

enum class ScoringVariant { gat, gatv2, tc };

inline std::string to_string(ScoringVariant v) {
  switch (v) {
    case ScoringVariant::gat: return "gat";
    case ScoringVariant::gatv2: return "gatv2";
    default: return "tc";
  }
}

// Exactly one variant's tensors are populated.
struct ScoringParams {
  ScoringVariant variant = ScoringVariant::gat;
  // gat: W {h_out, h_in}, a {2*h_out}; gatv2: W {h_out, 2*h_in}, a {h_out}
  Tensor W, a;
  real_t leaky_slope = 0.2;
  // tc: Wq, Wk {d, h_in}; bq, bk {d}
  Tensor Wq, Wk, bq, bk;
};

inline ScoringParams init_scoring(ScoringVariant variant, std::size_t h_in, std::size_t h_out,
                                  Rng& rng, real_t leaky_slope = 0.2) {
  ScoringParams p;
  p.variant = variant;
  p.leaky_slope = leaky_slope;
  switch (variant) {
    case ScoringVariant::gat:
      p.W = init_matrix(h_out, h_in, rng);
      p.a = init_vector(2 * h_out, rng, real_t(1) / std::sqrt(static_cast<real_t>(2 * h_out)));
      break;
    case ScoringVariant::gatv2:
      p.W = init_matrix(h_out, 2 * h_in, rng);
      p.a = init_vector(h_out, rng, real_t(1) / std::sqrt(static_cast<real_t>(h_out)));
      break;
    case ScoringVariant::tc:
      p.Wq = init_matrix(h_out, h_in, rng);
      p.Wk = init_matrix(h_out, h_in, rng);
      p.bq = Tensor::param({h_out}, std::vector<real_t>(h_out, 0));
      p.bk = Tensor::param({h_out}, std::vector<real_t>(h_out, 0));
      break;
  }
  return p;
}

namespace detail {
inline void edge_endpoints(const Graph& g, std::vector<std::size_t>& src,
                           std::vector<std::size_t>& dst) {
  src.reserve(g.num_edges());
  dst.reserve(g.num_edges());
  for (const Edge& e : g.edges()) {
    src.push_back(static_cast<std::size_t>(e.first));
    dst.push_back(static_cast<std::size_t>(e.second));
  }
}
}  // namespace detail

// Per-edge attention scores e_ij, aligned with g.edges(). The receiving
// node i is the edge destination and is always the scoring function's
// first argument:
//   gat:   LeakyReLU(a^T [W h_i || W h_j])
//   gatv2: a^T LeakyReLU(W [h_i || h_j])
//   tc:    (q_i^T k_j) / sqrt(d),  q = Wq h + bq, k = Wk h + bk
inline Tensor score_edges(const Graph& g, const Tensor& H, const ScoringParams& p) {
  if (H.rank() != 2 || H.shape()[0] != static_cast<std::size_t>(g.num_nodes()))
    throw ShapeError("score_edges: feature matrix must have one row per node");
  std::vector<std::size_t> src, dst;
  detail::edge_endpoints(g, src, dst);

  switch (p.variant) {
    case ScoringVariant::gat: {
      Tensor WH = linear(H, p.W);
      Tensor pair = concat({gather_rows(WH, dst), gather_rows(WH, src)}, 1);
      return leaky_relu(matmul(pair, p.a), p.leaky_slope);
    }
    case ScoringVariant::gatv2: {
      Tensor pair = concat({gather_rows(H, dst), gather_rows(H, src)}, 1);
      return matmul(leaky_relu(linear(pair, p.W), p.leaky_slope), p.a);
    }
    case ScoringVariant::tc:
    default: {
      Tensor Q = linear(H, p.Wq, p.bq);
      Tensor K = linear(H, p.Wk, p.bk);
      const real_t d = static_cast<real_t>(p.Wq.shape()[0]);
      return scale(row_sum(mul(gather_rows(Q, dst), gather_rows(K, src))), 1 / std::sqrt(d));
    }
  }
}

enum class NormMode { standard, flow };

inline std::string to_string(NormMode m) { return m == NormMode::standard ? "standard" : "flow"; }

// Per-edge attention weights aligned with the graph's edge sequence.
// standard: weights into each node sum to 1 over its incoming edges.
// flow:     weights out of each node sum to 1 over its outgoing edges.
struct EdgeWeights {
  Tensor values;
  NormMode mode = NormMode::standard;
};

inline EdgeWeights normalize_standard(const Graph& g, const Tensor& e) {
  std::vector<std::size_t> src, dst;
  detail::edge_endpoints(g, src, dst);
  return EdgeWeights{segment_softmax(e, dst, static_cast<std::size_t>(g.num_nodes())),
                     NormMode::standard};
}

inline EdgeWeights normalize_flow(const Graph& g, const Tensor& e) {
  std::vector<std::size_t> src, dst;
  detail::edge_endpoints(g, src, dst);
  return EdgeWeights{segment_softmax(e, src, static_cast<std::size_t>(g.num_nodes())),
                     NormMode::flow};
}

inline EdgeWeights normalize(const Graph& g, const Tensor& e, NormMode mode) {
  return mode == NormMode::standard ? normalize_standard(g, e) : normalize_flow(g, e);
}

// f = single linear map on sender states; phi = linear + LeakyReLU.
struct MpLayerParams {
  ScoringParams scoring;
  Tensor f_W;    // {h_out, h_in}
  Tensor phi_W;  // {h_out, h_out}
  Tensor phi_b;  // {h_out}
  real_t phi_slope = 0.2;
};

inline MpLayerParams init_mp_layer(ScoringVariant variant, std::size_t h_in, std::size_t h_out,
                                   Rng& rng, real_t leaky_slope = 0.2) {
  MpLayerParams p;
  p.scoring = init_scoring(variant, h_in, h_out, rng, leaky_slope);
  p.f_W = init_matrix(h_out, h_in, rng);
  p.phi_W = init_matrix(h_out, h_out, rng);
  p.phi_b = Tensor::param({h_out}, std::vector<real_t>(h_out, 0));
  p.phi_slope = leaky_slope;
  return p;
}

// Weighted sum of messages f(h_j) over each node's incoming edges, i.e.
// the aggregate before phi. Nodes without incoming edges get a zero row.
inline Tensor aggregate_messages(const Graph& g, const Tensor& H, const MpLayerParams& p,
                                 NormMode mode) {
  Tensor e = score_edges(g, H, p.scoring);
  EdgeWeights w = normalize(g, e, mode);
  std::vector<std::size_t> src, dst;
  detail::edge_endpoints(g, src, dst);
  Tensor messages = gather_rows(linear(H, p.f_W), src);
  return segment_sum(scale_rows(messages, w.values), dst, static_cast<std::size_t>(g.num_nodes()));
}

// One full message-passing layer: H' = phi(sum_j weight_ij f(h_j)).
inline Tensor mp_layer(const Graph& g, const Tensor& H, const MpLayerParams& p, NormMode mode) {
  return leaky_relu(linear(aggregate_messages(g, H, p, mode), p.phi_W, p.phi_b), p.phi_slope);
}

inline std::vector<Tensor> mp_layer_params(const MpLayerParams& p) {
  std::vector<Tensor> out;
  switch (p.scoring.variant) {
    case ScoringVariant::gat:
    case ScoringVariant::gatv2:
      out = {p.scoring.W, p.scoring.a};
      break;
    case ScoringVariant::tc:
      out = {p.scoring.Wq, p.scoring.Wk, p.scoring.bq, p.scoring.bk};
      break;
  }
  out.push_back(p.f_W);
  out.push_back(p.phi_W);
  out.push_back(p.phi_b);
  return out;
}

}  // namespace flowgnn
