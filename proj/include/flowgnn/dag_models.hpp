#pragma once

// Sequential DAG encoders: the DAGNN baseline, the D-VAE gated-sum
// baseline, the two-sublayer FlowDAGNN (reverse pass + forward pass with
// flow attention), and the graph-level readouts.

#include <string>
#include <utility>
#include <vector>

#include "flowgnn/attention.hpp"
#include "flowgnn/graph.hpp"
#include "flowgnn/tensor.hpp"

namespace flowgnn {

// Node features lifted to the model's hidden width: columns beyond the
// feature dimension are zero-padded. This is the l=0 entry of the
// cross-layer readout concatenation.
inline Tensor input_states(const Dag& d, std::size_t hidden) {
  const std::size_t n = static_cast<std::size_t>(d.num_nodes());
  const std::size_t rho = d.features().cols;
  if (rho > hidden)
    throw ShapeError("input_states: hidden dimension smaller than feature dimension");
  std::vector<real_t> data(n * hidden, 0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t c = 0; c < rho; ++c) data[v * hidden + c] = d.features()(v, c);
  return Tensor::constant({n, hidden}, std::move(data));
}

// ---------------------------------------------------------------------------
// DAGNN
// ---------------------------------------------------------------------------

struct DagnnLayerParams {
  Tensor w1, w2;  // attention vectors, {hidden}
  GruParams gru;
};

inline DagnnLayerParams init_dagnn_layer(std::size_t hidden, Rng& rng) {
  const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(hidden));
  DagnnLayerParams p;
  p.w1 = init_vector(hidden, rng, bound);
  p.w2 = init_vector(hidden, rng, bound);
  p.gru = init_gru(hidden, hidden, rng);
  return p;
}

inline std::vector<Tensor> dagnn_layer_params(const DagnnLayerParams& p) {
  return {p.w1, p.w2, p.gru.Wr, p.gru.Wz, p.gru.Wn, p.gru.Ur, p.gru.Uz, p.gru.Un,
          p.gru.br, p.gru.bz, p.gru.bn};
}

// Sequential update in topological order:
//   alpha_ij = softmax_{j in N_in(i)}(w1^T h_i + w2^T h'_j)
//   m_i      = sum_j alpha_ij h'_j
//   h'_i     = GRU(h_i, m_i)
// Initial nodes aggregate the zero message.
inline Tensor dagnn_layer(const Dag& d, const Tensor& H, const DagnnLayerParams& p) {
  const std::size_t hidden = H.shape()[1];
  std::vector<Tensor> state(static_cast<std::size_t>(d.num_nodes()));
  for (node_t v : d.topo_order()) {
    Tensor h_v = row(H, static_cast<std::size_t>(v));
    const auto& preds = d.graph().in_neighbors(v);
    Tensor m;
    if (preds.empty()) {
      m = Tensor::zeros({hidden});
    } else {
      std::vector<Tensor> rows;
      rows.reserve(preds.size());
      for (node_t j : preds) rows.push_back(state[static_cast<std::size_t>(j)]);
      Tensor S = stack_rows(rows);
      Tensor alpha = softmax(bcast_add(matmul(S, p.w2), dot(p.w1, h_v)));
      m = matmul(alpha, S);
    }
    state[static_cast<std::size_t>(v)] = gru_cell(h_v, m, p.gru);
  }
  return stack_rows(state);
}

// ---------------------------------------------------------------------------
// D-VAE encoder layer
// ---------------------------------------------------------------------------

struct DvaeLayerParams {
  Tensor g_W, g_b;  // gating network, linear + sigmoid
  Tensor m_W, m_b;  // mapping network, linear
  GruParams gru;
};

inline DvaeLayerParams init_dvae_layer(std::size_t hidden, Rng& rng) {
  DvaeLayerParams p;
  p.g_W = init_matrix(hidden, hidden, rng);
  p.g_b = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  p.m_W = init_matrix(hidden, hidden, rng);
  p.m_b = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  p.gru = init_gru(hidden, hidden, rng);
  return p;
}

inline std::vector<Tensor> dvae_layer_params(const DvaeLayerParams& p) {
  return {p.g_W, p.g_b, p.m_W, p.m_b, p.gru.Wr, p.gru.Wz, p.gru.Wn,
          p.gru.Ur, p.gru.Uz, p.gru.Un, p.gru.br, p.gru.bz, p.gru.bn};
}

// Gated-sum aggregation: m_i = sum_j g(h'_j) (.) m(h'_j), h'_i = GRU(h_i, m_i).
inline Tensor dvae_layer(const Dag& d, const Tensor& H, const DvaeLayerParams& p) {
  const std::size_t hidden = H.shape()[1];
  std::vector<Tensor> state(static_cast<std::size_t>(d.num_nodes()));
  for (node_t v : d.topo_order()) {
    Tensor h_v = row(H, static_cast<std::size_t>(v));
    const auto& preds = d.graph().in_neighbors(v);
    Tensor m;
    if (preds.empty()) {
      m = Tensor::zeros({hidden});
    } else {
      std::vector<Tensor> rows;
      rows.reserve(preds.size());
      for (node_t j : preds) rows.push_back(state[static_cast<std::size_t>(j)]);
      Tensor S = stack_rows(rows);
      Tensor gated = mul(sigmoid(linear(S, p.g_W, p.g_b)), linear(S, p.m_W, p.m_b));
      m = matmul(Tensor::constant({preds.size()}, std::vector<real_t>(preds.size(), 1)), gated);
    }
    state[static_cast<std::size_t>(v)] = gru_cell(h_v, m, p.gru);
  }
  return stack_rows(state);
}

// ---------------------------------------------------------------------------
// FlowDAGNN
// ---------------------------------------------------------------------------

struct FlowDagnnSublayerParams {
  Tensor w1, w2;  // {hidden}
  GruParams gru;
};

struct FlowDagnnLayerParams {
  FlowDagnnSublayerParams rv;  // reverse pass
  FlowDagnnSublayerParams fw;  // forward pass
};

inline FlowDagnnLayerParams init_flowdagnn_layer(std::size_t hidden, Rng& rng) {
  const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(hidden));
  FlowDagnnLayerParams p;
  p.rv.w1 = init_vector(hidden, rng, bound);
  p.rv.w2 = init_vector(hidden, rng, bound);
  p.rv.gru = init_gru(hidden, hidden, rng);
  p.fw.w1 = init_vector(hidden, rng, bound);
  p.fw.w2 = init_vector(hidden, rng, bound);
  p.fw.gru = init_gru(hidden, hidden, rng);
  return p;
}

inline std::vector<Tensor> flowdagnn_layer_params(const FlowDagnnLayerParams& p) {
  std::vector<Tensor> out = {p.rv.w1, p.rv.w2, p.rv.gru.Wr, p.rv.gru.Wz, p.rv.gru.Wn,
                             p.rv.gru.Ur, p.rv.gru.Uz, p.rv.gru.Un, p.rv.gru.br,
                             p.rv.gru.bz, p.rv.gru.bn};
  std::vector<Tensor> fw = {p.fw.w1, p.fw.w2, p.fw.gru.Wr, p.fw.gru.Wz, p.fw.gru.Wn,
                            p.fw.gru.Ur, p.fw.gru.Uz, p.fw.gru.Un, p.fw.gru.br,
                            p.fw.gru.bz, p.fw.gru.bn};
  out.insert(out.end(), fw.begin(), fw.end());
  return out;
}

struct FlowDagnnLayerResult {
  Tensor h_rv;        // {n, hidden}
  Tensor h_fw;        // {n, hidden}
  EdgeWeights betas;  // flow weights, aligned with d.edges()
};

// Sublayer 1 (reverse pass): a standard DAGNN layer on the edge-reversed
// DAG, i.e. aggregation over each node's successors with scores
// w1^T h_i + w2^T h_j^rv softmaxed over N_out(i).
// Sublayer 2 (forward pass): flow attention over the original DAG; the
// score of edge (j,i) is w1^T h_i^rv + w2^T h_j^fw, normalized across
// N_out(j), and h_i^fw = GRU(h_i^rv, m_i^fw).
inline FlowDagnnLayerResult flowdagnn_layer(const Dag& d, const Tensor& H,
                                            const FlowDagnnLayerParams& p) {
  const std::size_t n = static_cast<std::size_t>(d.num_nodes());
  const std::size_t hidden = H.shape()[1];

  // Reverse pass, processed root-side first.
  std::vector<Tensor> h_rv(n);
  for (auto it = d.topo_order().rbegin(); it != d.topo_order().rend(); ++it) {
    const node_t v = *it;
    Tensor h_v = row(H, static_cast<std::size_t>(v));
    const auto& succs = d.graph().out_neighbors(v);
    Tensor m;
    if (succs.empty()) {
      m = Tensor::zeros({hidden});
    } else {
      std::vector<Tensor> rows;
      rows.reserve(succs.size());
      for (node_t j : succs) rows.push_back(h_rv[static_cast<std::size_t>(j)]);
      Tensor S = stack_rows(rows);
      Tensor alpha = softmax(bcast_add(matmul(S, p.rv.w2), dot(p.rv.w1, h_v)));
      m = matmul(alpha, S);
    }
    h_rv[static_cast<std::size_t>(v)] = gru_cell(h_v, m, p.rv.gru);
  }

  // Forward pass. beta for the out-edges of node j becomes available as
  // soon as h_j^fw exists; receivers only run after all their senders.
  std::vector<Tensor> h_fw(n);
  std::vector<Tensor> beta_edge(d.edges().size());
  auto emit_out_betas = [&](node_t j) {
    const auto& outs = d.graph().out_neighbors(j);
    if (outs.empty()) return;
    std::vector<Tensor> rv_rows;
    rv_rows.reserve(outs.size());
    for (node_t i : outs) rv_rows.push_back(h_rv[static_cast<std::size_t>(i)]);
    Tensor scores = bcast_add(matmul(stack_rows(rv_rows), p.fw.w1),
                              dot(p.fw.w2, h_fw[static_cast<std::size_t>(j)]));
    Tensor beta = softmax(scores);
    for (std::size_t k = 0; k < outs.size(); ++k)
      beta_edge[d.graph().edge_index(j, outs[k])] = element(beta, k);
  };

  for (node_t v : d.topo_order()) {
    const auto& preds = d.graph().in_neighbors(v);
    Tensor m;
    if (preds.empty()) {
      m = Tensor::zeros({hidden});
    } else {
      std::vector<Tensor> rows, betas;
      rows.reserve(preds.size());
      betas.reserve(preds.size());
      for (node_t j : preds) {
        rows.push_back(h_fw[static_cast<std::size_t>(j)]);
        betas.push_back(beta_edge[d.graph().edge_index(j, v)]);
      }
      m = matmul(stack_scalars(betas), stack_rows(rows));
    }
    h_fw[static_cast<std::size_t>(v)] = gru_cell(h_rv[static_cast<std::size_t>(v)], m, p.fw.gru);
    emit_out_betas(v);
  }

  FlowDagnnLayerResult res;
  res.h_rv = stack_rows(h_rv);
  res.h_fw = stack_rows(h_fw);
  res.betas = EdgeWeights{d.edges().empty() ? Tensor::constant({0}, {})
                                            : stack_scalars(beta_edge),
                          NormMode::flow};
  return res;
}

// ---------------------------------------------------------------------------
// Readouts
// ---------------------------------------------------------------------------

namespace detail {
// Per-node concatenation across layers (l = 0 first), then elementwise max
// over the given node set.
inline Tensor pooled_stack(const std::vector<Tensor>& layer_states,
                           const std::vector<node_t>& nodes) {
  if (nodes.empty()) throw std::invalid_argument("readout: empty pooling set");
  std::vector<Tensor> stacks;
  stacks.reserve(nodes.size());
  for (node_t v : nodes) {
    std::vector<Tensor> parts;
    parts.reserve(layer_states.size());
    for (const Tensor& H : layer_states) parts.push_back(row(H, static_cast<std::size_t>(v)));
    stacks.push_back(concat(parts));
  }
  return max_pool_rows(stack_rows(stacks));
}
}  // namespace detail

// Max-Pool_{i in I}(||_l h_i^{rv,l}) || Max-Pool_{j in F}(||_l h_j^{fw,l}),
// where l = 0 contributes the input states.
inline Tensor readout_flowdagnn(const Tensor& H0, const std::vector<FlowDagnnLayerResult>& layers,
                                const Dag& d) {
  if (layers.empty()) throw std::invalid_argument("readout_flowdagnn: needs at least one layer");
  std::vector<Tensor> rv_states = {H0}, fw_states = {H0};
  for (const auto& l : layers) {
    rv_states.push_back(l.h_rv);
    fw_states.push_back(l.h_fw);
  }
  return concat({detail::pooled_stack(rv_states, d.initial_nodes()),
                 detail::pooled_stack(fw_states, d.final_nodes())});
}

// Unidirectional DAGNN/D-VAE readout: max-pool over the final nodes of the
// per-layer concatenation (l = 0 included).
inline Tensor readout_dagnn(const std::vector<Tensor>& layer_states, const Dag& d) {
  return detail::pooled_stack(layer_states, d.final_nodes());
}

// Bidirectional readout: independently computed forward and reverse stacks
// pooled over the final and initial nodes respectively, concatenated, and
// passed through a fully connected layer.
inline Tensor readout_bidirectional(const std::vector<Tensor>& fw_states,
                                    const std::vector<Tensor>& rv_states, const Dag& d,
                                    const Tensor& fc_W, const Tensor& fc_b) {
  Tensor cat = concat({detail::pooled_stack(rv_states, d.initial_nodes()),
                       detail::pooled_stack(fw_states, d.final_nodes())});
  return linear(cat, fc_W, fc_b);
}

// ---------------------------------------------------------------------------
// Stacked encoders
// ---------------------------------------------------------------------------

enum class DagModelKind { dagnn, dvae, flowdagnn };

inline std::string to_string(DagModelKind k) {
  switch (k) {
    case DagModelKind::dagnn: return "dagnn";
    case DagModelKind::dvae: return "dvae";
    default: return "flowdagnn";
  }
}

// Parameter bundle for an L-layer DAG encoder. For DAGNN/D-VAE with
// bidirectional processing, `*_rv` hold the reverse-direction layer stack
// and fc the readout projection; FlowDAGNN needs neither.
struct DagEncoder {
  DagModelKind kind = DagModelKind::dagnn;
  std::size_t hidden = 0;
  bool bidirectional = false;
  std::vector<DagnnLayerParams> dagnn_layers, dagnn_layers_rv;
  std::vector<DvaeLayerParams> dvae_layers, dvae_layers_rv;
  std::vector<FlowDagnnLayerParams> flow_layers;
  Tensor fc_W, fc_b;

  std::size_t num_layers() const {
    switch (kind) {
      case DagModelKind::dagnn: return dagnn_layers.size();
      case DagModelKind::dvae: return dvae_layers.size();
      default: return flow_layers.size();
    }
  }

  // Width of the embedding produced by encode().
  std::size_t embedding_dim() const {
    const std::size_t stack = (num_layers() + 1) * hidden;
    if (kind == DagModelKind::flowdagnn) return 2 * stack;
    return bidirectional ? hidden : stack;
  }
};

inline DagEncoder init_dag_encoder(DagModelKind kind, std::size_t hidden, std::size_t num_layers,
                                   Rng& rng, bool bidirectional = false) {
  DagEncoder enc;
  enc.kind = kind;
  enc.hidden = hidden;
  enc.bidirectional = bidirectional && kind != DagModelKind::flowdagnn;
  for (std::size_t l = 0; l < num_layers; ++l) {
    switch (kind) {
      case DagModelKind::dagnn:
        enc.dagnn_layers.push_back(init_dagnn_layer(hidden, rng));
        if (enc.bidirectional) enc.dagnn_layers_rv.push_back(init_dagnn_layer(hidden, rng));
        break;
      case DagModelKind::dvae:
        enc.dvae_layers.push_back(init_dvae_layer(hidden, rng));
        if (enc.bidirectional) enc.dvae_layers_rv.push_back(init_dvae_layer(hidden, rng));
        break;
      case DagModelKind::flowdagnn:
        enc.flow_layers.push_back(init_flowdagnn_layer(hidden, rng));
        break;
    }
  }
  if (enc.bidirectional) {
    const std::size_t stack = (num_layers + 1) * hidden;
    enc.fc_W = init_matrix(hidden, 2 * stack, rng);
    enc.fc_b = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  }
  return enc;
}

inline std::vector<Tensor> dag_encoder_params(const DagEncoder& enc) {
  std::vector<Tensor> out;
  auto append = [&out](const std::vector<Tensor>& v) { out.insert(out.end(), v.begin(), v.end()); };
  for (const auto& l : enc.dagnn_layers) append(dagnn_layer_params(l));
  for (const auto& l : enc.dagnn_layers_rv) append(dagnn_layer_params(l));
  for (const auto& l : enc.dvae_layers) append(dvae_layer_params(l));
  for (const auto& l : enc.dvae_layers_rv) append(dvae_layer_params(l));
  for (const auto& l : enc.flow_layers) append(flowdagnn_layer_params(l));
  if (enc.bidirectional) {
    out.push_back(enc.fc_W);
    out.push_back(enc.fc_b);
  }
  return out;
}

// Attention vectors whose score contribution is constant within every
// softmax segment and therefore cancels exactly: dagnn's w1 (the w1^T h_i
// term is shared by all predecessors of i), the FlowDAGNN reverse pass's
// w1, and the forward pass's w2 (shared by all receivers of j). Their true
// gradient is identically zero; finite differences on them measure only
// floating-point cancellation noise.
inline std::vector<Tensor> dag_encoder_shift_invariant_params(const DagEncoder& enc) {
  std::vector<Tensor> out;
  for (const auto& l : enc.dagnn_layers) out.push_back(l.w1);
  for (const auto& l : enc.dagnn_layers_rv) out.push_back(l.w1);
  for (const auto& l : enc.flow_layers) {
    out.push_back(l.rv.w1);
    out.push_back(l.fw.w2);
  }
  return out;
}

// dag_encoder_params minus the shift-invariant attention vectors; the set
// a gradient check can meaningfully compare against finite differences.
inline std::vector<Tensor> dag_encoder_live_params(const DagEncoder& enc) {
  const std::vector<Tensor> dead = dag_encoder_shift_invariant_params(enc);
  std::vector<Tensor> out;
  for (const Tensor& p : dag_encoder_params(enc)) {
    bool is_dead = false;
    for (const Tensor& d : dead)
      if (d.node() == p.node()) is_dead = true;
    if (!is_dead) out.push_back(p);
  }
  return out;
}

struct DagEncodeResult {
  Tensor embedding;
  std::vector<EdgeWeights> betas;  // one per layer; FlowDAGNN only
};

// Runs the layer stack (layer l consumes layer l-1's output; FlowDAGNN
// layers consume the previous forward states) and applies the model's
// readout.
inline DagEncodeResult encode(const DagEncoder& enc, const Dag& d) {
  if (enc.num_layers() == 0) throw std::invalid_argument("encode: needs at least one layer");
  DagEncodeResult res;
  Tensor H0 = input_states(d, enc.hidden);

  if (enc.kind == DagModelKind::flowdagnn) {
    std::vector<FlowDagnnLayerResult> results;
    Tensor H = H0;
    for (const auto& layer : enc.flow_layers) {
      FlowDagnnLayerResult r = flowdagnn_layer(d, H, layer);
      H = r.h_fw;
      res.betas.push_back(r.betas);
      results.push_back(std::move(r));
    }
    res.embedding = readout_flowdagnn(H0, results, d);
    return res;
  }

  auto run_stack = [&](const Dag& dag, bool reverse_params) {
    std::vector<Tensor> states = {input_states(dag, enc.hidden)};
    Tensor H = states[0];
    for (std::size_t l = 0; l < enc.num_layers(); ++l) {
      if (enc.kind == DagModelKind::dagnn)
        H = dagnn_layer(dag, H, reverse_params ? enc.dagnn_layers_rv[l] : enc.dagnn_layers[l]);
      else
        H = dvae_layer(dag, H, reverse_params ? enc.dvae_layers_rv[l] : enc.dvae_layers[l]);
      states.push_back(H);
    }
    return states;
  };

  std::vector<Tensor> fw_states = run_stack(d, false);
  if (!enc.bidirectional) {
    res.embedding = readout_dagnn(fw_states, d);
  } else {
    // Reverse-direction states are computed independently on the
    // edge-reversed DAG (pooling sets are those of the original DAG).
    std::vector<Tensor> rv_states = run_stack(reverse(d), true);
    res.embedding = readout_bidirectional(fw_states, rv_states, d, enc.fc_W, enc.fc_b);
  }
  return res;
}

}  // namespace flowgnn
