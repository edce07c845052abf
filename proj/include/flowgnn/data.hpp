#pragma once

// Line-delimited graph dataset format, split logic, and oracle-labeled
// synthetic generators.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowgnn/expressivity.hpp"
#include "flowgnn/graph.hpp"

namespace flowgnn {

// One graph sample. Edges are stored once; undirected records are doubled
// into both directions when the in-memory Graph is materialized.
struct GraphRecord {
  std::string id;
  bool directed = true;
  Matrix nodes;  // num_nodes x feature_dim
  std::vector<Edge> edges;
  std::vector<node_t> sources, targets;
  double label = 0;
};

enum class TaskKind { classification, regression };

struct TaskSpec {
  TaskKind kind = TaskKind::classification;
  std::size_t num_classes = 2;
};

struct DatasetManifest {
  TaskSpec task;
  std::size_t feature_dim = 0;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<GraphRecord> records;

  std::size_t size() const { return records.size(); }
};

inline Graph to_graph(const GraphRecord& rec) {
  std::vector<Edge> edges = rec.edges;
  if (!rec.directed) {
    for (const Edge& e : rec.edges) edges.emplace_back(e.second, e.first);
  }
  return Graph(static_cast<node_t>(rec.nodes.rows), std::move(edges), rec.nodes, rec.sources,
               rec.targets);
}

inline Dag to_dag(const GraphRecord& rec) { return topo_sort(to_graph(rec)); }

// ---------------------------------------------------------------------------
// Serialization (one self-describing JSON record per line)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json record_to_json(const GraphRecord& rec) {
  nlohmann::json j;
  j["id"] = rec.id;
  j["directed"] = rec.directed;
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t r = 0; r < rec.nodes.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < rec.nodes.cols; ++c) row.push_back(rec.nodes(r, c));
    nodes.push_back(std::move(row));
  }
  j["nodes"] = std::move(nodes);
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : rec.edges) edges.push_back({e.first, e.second});
  j["edges"] = std::move(edges);
  j["sources"] = rec.sources;
  j["targets"] = rec.targets;
  j["label"] = rec.label;
  return j;
}

inline GraphRecord record_from_json(const nlohmann::json& j) {
  GraphRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.directed = j.at("directed").get<bool>();
  const auto& nodes = j.at("nodes");
  const std::size_t rows = nodes.size();
  const std::size_t cols = rows == 0 ? 0 : nodes[0].size();
  rec.nodes = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (nodes[r].size() != cols) throw ParseError("record: inconsistent feature dimension");
    for (std::size_t c = 0; c < cols; ++c) rec.nodes(r, c) = nodes[r][c].get<double>();
  }
  for (const auto& e : j.at("edges"))
    rec.edges.emplace_back(e.at(0).get<node_t>(), e.at(1).get<node_t>());
  rec.sources = j.at("sources").get<std::vector<node_t>>();
  rec.targets = j.at("targets").get<std::vector<node_t>>();
  rec.label = j.at("label").get<double>();
  return rec;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["task"]["kind"] = m.task.kind == TaskKind::classification ? "classification" : "regression";
  if (m.task.kind == TaskKind::classification) j["task"]["num_classes"] = m.task.num_classes;
  j["feature_dim"] = m.feature_dim;
  j["split_ratios"] = m.split_ratios;
  j["seed"] = m.seed;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  const std::string kind = j.at("task").at("kind").get<std::string>();
  if (kind == "classification") {
    m.task.kind = TaskKind::classification;
    m.task.num_classes = j.at("task").at("num_classes").get<std::size_t>();
  } else if (kind == "regression") {
    m.task.kind = TaskKind::regression;
    m.task.num_classes = 0;
  } else {
    throw ParseError("manifest: unknown task kind '" + kind + "'");
  }
  m.feature_dim = j.at("feature_dim").get<std::size_t>();
  m.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const double total = m.split_ratios[0] + m.split_ratios[1] + m.split_ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw ParseError("manifest: split ratios must sum to 1");
  return m;
}

// Writes one record per line; a manifest json sits alongside under
// <path>.manifest.json.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_dataset: cannot open " + path);
  for (const auto& rec : ds.records) out << detail::record_to_json(rec).dump() << "\n";
  std::ofstream mout(path + ".manifest.json");
  if (!mout) throw Error("save_dataset: cannot open manifest for " + path);
  mout << manifest_to_json(ds.manifest).dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream min(path + ".manifest.json");
  if (!min) throw Error("load_dataset: missing manifest for " + path);
  Dataset ds;
  try {
    ds.manifest = manifest_from_json(nlohmann::json::parse(min));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_dataset: bad manifest: " + std::string(e.what()));
  }

  std::ifstream in(path);
  if (!in) throw Error("load_dataset: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.records.push_back(detail::record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("load_dataset: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (ds.records.back().nodes.cols != ds.manifest.feature_dim && ds.records.back().nodes.rows > 0)
      throw ParseError("load_dataset: line " + std::to_string(lineno) +
                       ": feature dimension disagrees with manifest");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct Splits {
  Dataset train, val, test;
};

namespace detail {
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
  std::size_t n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  std::size_t n_test = static_cast<std::size_t>(std::llround(ratios[2] * static_cast<double>(n)));
  if (n_val + n_test > n) throw std::invalid_argument("split: ratios leave no training data");
  return {n - n_val - n_test, n_val, n_test};
}
}  // namespace detail

// Seeded shuffle followed by contiguous cuts. With `stratify`, the shuffle
// and cut run per class, keeping class proportions within one sample.
inline Splits split(const Dataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed,
                    bool stratify = false) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: ratios must sum to 1");
  std::size_t nonzero = 0;
  for (double r : ratios)
    if (r > 0) ++nonzero;
  if (ds.size() < nonzero) throw std::invalid_argument("split: dataset smaller than split count");

  Splits out;
  out.train.manifest = out.val.manifest = out.test.manifest = ds.manifest;

  Rng rng(seed);
  auto emit = [&](const std::vector<std::size_t>& idx) {
    const auto counts = detail::split_counts(idx.size(), ratios);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const GraphRecord& rec = ds.records[idx[i]];
      if (i < counts[0])
        out.train.records.push_back(rec);
      else if (i < counts[0] + counts[1])
        out.val.records.push_back(rec);
      else
        out.test.records.push_back(rec);
    }
  };

  if (!stratify) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    emit(idx);
  } else {
    std::map<long long, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i)
      by_class[static_cast<long long>(std::llround(ds.records[i].label))].push_back(i);
    for (auto& [cls, idx] : by_class) {
      rng.shuffle(idx);
      emit(idx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

namespace detail {

// Independent Kirchhoff oracle used only for labeling: every source
// injects a unit flow; at each node the outgoing flow splits
// proportionally to the inverse component value of the receiving node.
// Returns the maximum edge flow.
inline double max_kirchhoff_flow(const Dag& d, const std::vector<double>& component_values) {
  std::vector<double> inflow(static_cast<std::size_t>(d.num_nodes()), 0);
  for (node_t s : d.initial_nodes()) inflow[static_cast<std::size_t>(s)] = 1.0;
  double max_flow = 0;
  for (node_t v : d.topo_order()) {
    const auto& outs = d.graph().out_neighbors(v);
    if (outs.empty()) continue;
    double denom = 0;
    for (node_t u : outs) denom += 1.0 / component_values[static_cast<std::size_t>(u)];
    for (node_t u : outs) {
      const double share = (1.0 / component_values[static_cast<std::size_t>(u)]) / denom;
      const double f = share * inflow[static_cast<std::size_t>(v)];
      inflow[static_cast<std::size_t>(u)] += f;
      max_flow = std::max(max_flow, f);
    }
  }
  return max_flow;
}

// Random DAG circuit with repeated component values drawn from a small
// palette. Feature layout: [component value, is_source, is_target].
inline GraphRecord random_circuit(Rng& rng, node_t max_nodes, const std::string& id) {
  static const double palette[] = {1.0, 2.0, 5.0};
  const node_t n = static_cast<node_t>(rng.uniform_int(4, max_nodes));
  std::vector<Edge> edges;
  std::set<Edge> seen;
  for (node_t v = 1; v < n; ++v) {
    const node_t num_pred = static_cast<node_t>(rng.uniform_int(1, 2));
    for (node_t k = 0; k < num_pred; ++k) {
      const node_t u = static_cast<node_t>(rng.uniform_int(0, v - 1));
      if (seen.insert({u, v}).second) edges.emplace_back(u, v);
    }
  }
  // Any dangling sink feeds the output node.
  std::vector<node_t> outdeg(static_cast<std::size_t>(n), 0);
  for (const Edge& e : edges) outdeg[static_cast<std::size_t>(e.first)]++;
  for (node_t v = 0; v + 1 < n; ++v)
    if (outdeg[static_cast<std::size_t>(v)] == 0 && seen.insert({v, static_cast<node_t>(n - 1)}).second)
      edges.emplace_back(v, static_cast<node_t>(n - 1));

  GraphRecord rec;
  rec.id = id;
  rec.directed = true;
  rec.nodes = Matrix(static_cast<std::size_t>(n), 3);
  std::vector<double> values(static_cast<std::size_t>(n));
  for (node_t v = 0; v < n; ++v) {
    values[static_cast<std::size_t>(v)] = palette[rng.uniform_int(std::uint64_t(3))];
    rec.nodes(static_cast<std::size_t>(v), 0) = static_cast<real_t>(values[static_cast<std::size_t>(v)]);
  }
  rec.edges = std::move(edges);

  Dag d = make_dag(n, rec.edges, rec.nodes);
  rec.sources = d.initial_nodes();
  rec.targets = d.final_nodes();
  for (node_t v : rec.sources) rec.nodes(static_cast<std::size_t>(v), 1) = 1;
  for (node_t v : rec.targets) rec.nodes(static_cast<std::size_t>(v), 2) = 1;
  rec.label = max_kirchhoff_flow(d, values);  // provisional; thresholded below
  return rec;
}

}  // namespace detail

// Binary classification: label 1 iff the maximum edge flow of the exact
// uniform-injection Kirchhoff flow exceeds the sample median. The median
// threshold balances the labels by construction.
inline Dataset gen_flow_classification(std::size_t n, node_t max_nodes, std::uint64_t seed) {
  if (max_nodes < 4) throw std::invalid_argument("gen_flow_classification: max_nodes must be >= 4");
  Dataset ds;
  ds.manifest.task = TaskSpec{TaskKind::classification, 2};
  ds.manifest.feature_dim = 3;
  ds.manifest.seed = seed;
  ds.manifest.split_ratios = {0.85, 0.05, 0.10};

  Rng rng(seed);
  std::vector<double> max_flows;
  max_flows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng item = rng.child(i);
    char id[32];
    std::snprintf(id, sizeof(id), "circuit-%06zu", i);
    ds.records.push_back(detail::random_circuit(item, max_nodes, id));
    max_flows.push_back(ds.records.back().label);
  }
  std::vector<double> sorted = max_flows;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double threshold = sorted.size() % 2 == 1
                               ? sorted[mid]
                               : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (std::size_t i = 0; i < n; ++i) ds.records[i].label = max_flows[i] > threshold ? 1 : 0;
  return ds;
}

// For each base rooted DAG, two records: the DAG itself (label 0) and its
// computation tree (label 1). A task that standard-attention DAG models
// provably cannot beat chance on.
inline Dataset gen_pair_discrimination(std::size_t n, std::uint64_t seed, node_t max_nodes = 10) {
  if (n < 2) throw std::invalid_argument("gen_pair_discrimination: n must be >= 2");
  Dataset ds;
  ds.manifest.task = TaskSpec{TaskKind::classification, 2};
  ds.manifest.feature_dim = 3;
  ds.manifest.seed = seed;
  ds.manifest.split_ratios = {0.8, 0.1, 0.1};

  const std::vector<GraphPair> pairs = gen_pair_family(n, max_nodes, seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto emit = [&](const Dag& d, double label, const char* suffix) {
      GraphRecord rec;
      char id[32];
      std::snprintf(id, sizeof(id), "pair-%05zu-%s", i, suffix);
      rec.id = id;
      rec.directed = true;
      rec.nodes = d.features();
      rec.edges = d.edges();
      rec.sources = d.initial_nodes();
      rec.targets = d.final_nodes();
      rec.label = label;
      ds.records.push_back(std::move(rec));
    };
    emit(pairs[i].d1, 0, "dag");
    emit(pairs[i].d2, 1, "tree");
  }
  return ds;
}

}  // namespace flowgnn
