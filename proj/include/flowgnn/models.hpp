#pragma once

// Model zoo tying encoders to prediction heads, plus checkpoint IO.
// Attention family (gat/gatv2/tc and their flow variants): stacked
// message-passing layers with ReLU + dropout in between and global max
// pooling. DAG family (dagnn/dvae/flowdagnn): sequential encoders with
// dropout on the embedding ahead of the head.

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowgnn/attention.hpp"
#include "flowgnn/dag_models.hpp"
#include "flowgnn/data.hpp"
#include "flowgnn/tensor.hpp"

namespace flowgnn {

struct ModelConfig {
  std::string type = "flowgat";  // gat|gatv2|tc|flowgat|flowgatv2|flowtc|dagnn|dvae|flowdagnn
  std::size_t layers = 2;
  std::size_t hidden = 16;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 2;  // 0 selects regression
  std::string head = "linear";  // linear | mlp
  real_t dropout = 0.1;
  bool bidirectional = true;  // dagnn/dvae baselines only
  real_t leaky_slope = 0.2;
  std::uint64_t init_seed = 1;

  bool is_dag_model() const { return type == "dagnn" || type == "dvae" || type == "flowdagnn"; }
  bool is_flow_variant() const { return type.rfind("flow", 0) == 0; }
  bool is_regression() const { return num_classes == 0; }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["type"] = c.type;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["feature_dim"] = c.feature_dim;
  j["num_classes"] = c.num_classes;
  j["head"] = c.head;
  j["dropout"] = c.dropout;
  j["bidirectional"] = c.bidirectional;
  j["leaky_slope"] = c.leaky_slope;
  j["init_seed"] = c.init_seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.type = j.at("type").get<std::string>();
  c.layers = j.at("layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.head = j.value("head", std::string("linear"));
  c.dropout = j.value("dropout", real_t(0.1));
  c.bidirectional = j.value("bidirectional", true);
  c.leaky_slope = j.value("leaky_slope", real_t(0.2));
  c.init_seed = j.value("init_seed", std::uint64_t(1));
  return c;
}

namespace detail {
inline ScoringVariant scoring_variant_of(const std::string& type) {
  if (type == "gat" || type == "flowgat") return ScoringVariant::gat;
  if (type == "gatv2" || type == "flowgatv2") return ScoringVariant::gatv2;
  if (type == "tc" || type == "flowtc") return ScoringVariant::tc;
  throw std::invalid_argument("unknown attention model type '" + type + "'");
}

inline DagModelKind dag_kind_of(const std::string& type) {
  if (type == "dagnn") return DagModelKind::dagnn;
  if (type == "dvae") return DagModelKind::dvae;
  if (type == "flowdagnn") return DagModelKind::flowdagnn;
  throw std::invalid_argument("unknown DAG model type '" + type + "'");
}
}  // namespace detail

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.feature_dim == 0) throw std::invalid_argument("Model: feature_dim must be set");
    if (cfg_.layers == 0) throw std::invalid_argument("Model: needs at least one layer");
    Rng rng(cfg_.init_seed);

    std::size_t embed_dim;
    if (cfg_.is_dag_model()) {
      if (cfg_.hidden < cfg_.feature_dim)
        throw std::invalid_argument("Model: DAG models require hidden >= feature_dim");
      encoder_ = init_dag_encoder(detail::dag_kind_of(cfg_.type), cfg_.hidden, cfg_.layers, rng,
                                  cfg_.bidirectional);
      embed_dim = encoder_.embedding_dim();
    } else {
      const ScoringVariant variant = detail::scoring_variant_of(cfg_.type);
      for (std::size_t l = 0; l < cfg_.layers; ++l)
        mp_layers_.push_back(init_mp_layer(variant, l == 0 ? cfg_.feature_dim : cfg_.hidden,
                                           cfg_.hidden, rng, cfg_.leaky_slope));
      embed_dim = cfg_.hidden;
    }

    const std::size_t out_dim = cfg_.is_regression() ? 1 : cfg_.num_classes;
    if (cfg_.head == "mlp") {
      head_W1_ = init_matrix(cfg_.hidden, embed_dim, rng);
      head_b1_ = Tensor::param({cfg_.hidden}, std::vector<real_t>(cfg_.hidden, 0));
      head_W2_ = init_matrix(out_dim, cfg_.hidden, rng);
      head_b2_ = Tensor::param({out_dim}, std::vector<real_t>(out_dim, 0));
    } else if (cfg_.head == "linear") {
      head_W1_ = init_matrix(out_dim, embed_dim, rng);
      head_b1_ = Tensor::param({out_dim}, std::vector<real_t>(out_dim, 0));
    } else {
      throw std::invalid_argument("Model: unknown head '" + cfg_.head + "'");
    }
    collect_named_params();
  }

  const ModelConfig& config() const { return cfg_; }
  void set_dropout(real_t rate) { cfg_.dropout = rate; }

  // Graph embedding before the prediction head.
  Tensor embed(const GraphRecord& rec, bool train_mode, Rng& rng) const {
    if (rec.nodes.cols != cfg_.feature_dim)
      throw ShapeError("Model: record feature dimension disagrees with config");
    if (cfg_.is_dag_model()) return encode(encoder_, to_dag(rec)).embedding;

    const Graph g = to_graph(rec);
    const NormMode mode = cfg_.is_flow_variant() ? NormMode::flow : NormMode::standard;
    Tensor H = Tensor::from_matrix(rec.nodes);
    for (std::size_t l = 0; l < mp_layers_.size(); ++l) {
      H = mp_layer(g, H, mp_layers_[l], mode);
      if (l + 1 < mp_layers_.size()) H = dropout(relu(H), cfg_.dropout, train_mode, rng);
    }
    return max_pool_rows(H);
  }

  // Log-probabilities over classes ({C}) or the scalar prediction ({1}).
  Tensor forward(const GraphRecord& rec, bool train_mode, Rng& rng) const {
    Tensor h = embed(rec, train_mode, rng);
    if (cfg_.is_dag_model()) h = dropout(h, cfg_.dropout, train_mode, rng);
    Tensor out;
    if (cfg_.head == "mlp") {
      Tensor hidden = cfg_.is_dag_model() ? relu(linear(h, head_W1_, head_b1_))
                                          : leaky_relu(linear(h, head_W1_, head_b1_), cfg_.leaky_slope);
      out = linear(hidden, head_W2_, head_b2_);
    } else {
      out = linear(h, head_W1_, head_b1_);
    }
    if (cfg_.is_regression()) return out;
    return row(log_softmax_rows(stack_rows({out})), 0);
  }

  // Flow-attention weights per layer for a DAG record (flowdagnn only).
  std::vector<EdgeWeights> flow_weights(const GraphRecord& rec) const {
    if (cfg_.type != "flowdagnn")
      throw std::invalid_argument("flow_weights: only flowdagnn produces flow weights");
    return encode(encoder_, to_dag(rec)).betas;
  }

  const std::vector<std::pair<std::string, Tensor>>& named_params() const { return named_; }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    out.reserve(named_.size());
    for (const auto& [name, t] : named_) out.push_back(t);
    return out;
  }

  // Parameters whose gradient is not identically zero. DAG attention
  // scores contain per-segment-constant terms whose softmax contribution
  // cancels exactly; those vectors are excluded here (see
  // dag_encoder_shift_invariant_params).
  std::vector<Tensor> live_params() const {
    if (!cfg_.is_dag_model()) return params();
    const std::vector<Tensor> dead = dag_encoder_shift_invariant_params(encoder_);
    std::vector<Tensor> out;
    for (const Tensor& p : params()) {
      bool is_dead = false;
      for (const Tensor& d : dead)
        if (d.node() == p.node()) is_dead = true;
      if (!is_dead) out.push_back(p);
    }
    return out;
  }

  std::vector<Tensor> shift_invariant_params() const {
    if (!cfg_.is_dag_model()) return {};
    return dag_encoder_shift_invariant_params(encoder_);
  }

 private:
  void collect_named_params() {
    auto add = [this](const std::string& name, const Tensor& t) { named_.emplace_back(name, t); };
    auto add_gru = [&](const std::string& prefix, const GruParams& g) {
      add(prefix + ".Wr", g.Wr);
      add(prefix + ".Wz", g.Wz);
      add(prefix + ".Wn", g.Wn);
      add(prefix + ".Ur", g.Ur);
      add(prefix + ".Uz", g.Uz);
      add(prefix + ".Un", g.Un);
      add(prefix + ".br", g.br);
      add(prefix + ".bz", g.bz);
      add(prefix + ".bn", g.bn);
    };

    for (std::size_t l = 0; l < mp_layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l);
      const auto& layer = mp_layers_[l];
      switch (layer.scoring.variant) {
        case ScoringVariant::gat:
        case ScoringVariant::gatv2:
          add(p + ".score.W", layer.scoring.W);
          add(p + ".score.a", layer.scoring.a);
          break;
        case ScoringVariant::tc:
          add(p + ".score.Wq", layer.scoring.Wq);
          add(p + ".score.Wk", layer.scoring.Wk);
          add(p + ".score.bq", layer.scoring.bq);
          add(p + ".score.bk", layer.scoring.bk);
          break;
      }
      add(p + ".f.W", layer.f_W);
      add(p + ".phi.W", layer.phi_W);
      add(p + ".phi.b", layer.phi_b);
    }

    auto add_dagnn = [&](const std::string& prefix, const DagnnLayerParams& lp) {
      add(prefix + ".w1", lp.w1);
      add(prefix + ".w2", lp.w2);
      add_gru(prefix + ".gru", lp.gru);
    };
    auto add_dvae = [&](const std::string& prefix, const DvaeLayerParams& lp) {
      add(prefix + ".g.W", lp.g_W);
      add(prefix + ".g.b", lp.g_b);
      add(prefix + ".m.W", lp.m_W);
      add(prefix + ".m.b", lp.m_b);
      add_gru(prefix + ".gru", lp.gru);
    };
    for (std::size_t l = 0; l < encoder_.dagnn_layers.size(); ++l)
      add_dagnn("layer" + std::to_string(l), encoder_.dagnn_layers[l]);
    for (std::size_t l = 0; l < encoder_.dagnn_layers_rv.size(); ++l)
      add_dagnn("layer" + std::to_string(l) + ".rv_dir", encoder_.dagnn_layers_rv[l]);
    for (std::size_t l = 0; l < encoder_.dvae_layers.size(); ++l)
      add_dvae("layer" + std::to_string(l), encoder_.dvae_layers[l]);
    for (std::size_t l = 0; l < encoder_.dvae_layers_rv.size(); ++l)
      add_dvae("layer" + std::to_string(l) + ".rv_dir", encoder_.dvae_layers_rv[l]);
    for (std::size_t l = 0; l < encoder_.flow_layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l);
      const auto& lp = encoder_.flow_layers[l];
      add(p + ".rv.w1", lp.rv.w1);
      add(p + ".rv.w2", lp.rv.w2);
      add_gru(p + ".rv.gru", lp.rv.gru);
      add(p + ".fw.w1", lp.fw.w1);
      add(p + ".fw.w2", lp.fw.w2);
      add_gru(p + ".fw.gru", lp.fw.gru);
    }
    if (encoder_.bidirectional) {
      add("readout.fc.W", encoder_.fc_W);
      add("readout.fc.b", encoder_.fc_b);
    }

    add("head.W1", head_W1_);
    add("head.b1", head_b1_);
    if (cfg_.head == "mlp") {
      add("head.W2", head_W2_);
      add("head.b2", head_b2_);
    }
  }

  ModelConfig cfg_;
  std::vector<MpLayerParams> mp_layers_;
  DagEncoder encoder_;
  Tensor head_W1_, head_b1_, head_W2_, head_b2_;
  std::vector<std::pair<std::string, Tensor>> named_;
};

// ---------------------------------------------------------------------------
// Checkpoints: model config plus named flat parameter vectors
// ---------------------------------------------------------------------------

inline void save_checkpoint(const Model& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "flowgnn-checkpoint-v1";
  j["model"] = model_config_to_json(model.config());
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : model.named_params()) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["data"] = t.value();
    params.push_back(std::move(p));
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_checkpoint: " + std::string(e.what()));
  }
  if (j.value("format", std::string()) != "flowgnn-checkpoint-v1")
    throw ParseError("load_checkpoint: unknown format");
  Model model(model_config_from_json(j.at("model")));

  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : model.named_params()) by_name.emplace(name, t);
  for (const auto& p : j.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("load_checkpoint: unexpected parameter " + name);
    const auto shape = p.at("shape").get<std::vector<std::size_t>>();
    const auto data = p.at("data").get<std::vector<real_t>>();
    if (shape != it->second.shape() || data.size() != it->second.size())
      throw ParseError("load_checkpoint: shape mismatch for " + name);
    it->second.mutable_value() = data;
  }
  return model;
}

}  // namespace flowgnn
