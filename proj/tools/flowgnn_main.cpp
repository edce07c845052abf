// flowgnn command-line interface
//
// Subcommands: gen-data, train, eval, verify-flow, expressivity, gradcheck.
// Every command resolves its configuration (defaults < config file < flags),
// writes the resolved copy into the output directory, and emits both a human
// readable report and machine lines prefixed with "RESULT". Output
// directories carry an ".incomplete" marker while a command is running.
//
// Exit codes: 0 success, 1 operational failure (including a failed check),
// 2 configuration errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowgnn/data.hpp"
#include "flowgnn/expressivity.hpp"
#include "flowgnn/flow.hpp"
#include "flowgnn/models.hpp"
#include "flowgnn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowgnn;

namespace {

struct OutputDir {
  fs::path dir;
  bool enabled = false;

  explicit OutputDir(const std::string& path) {
    if (path.empty()) return;
    enabled = true;
    dir = path;
    fs::create_directories(dir);
    std::ofstream(dir / ".incomplete") << "running\n";
  }

  void write_json(const std::string& name, const json& j, int indent = 2) const {
    if (!enabled) return;
    std::ofstream out(dir / name);
    out << j.dump(indent) << "\n";
  }

  void write_text(const std::string& name, const std::string& text) const {
    if (!enabled) return;
    std::ofstream(dir / name) << text;
  }

  void finish() const {
    if (enabled) fs::remove(dir / ".incomplete");
  }
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config file " + path + ": " + e.what());
  }
}

void fail_config(const std::vector<std::string>& errors) {
  for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
  std::cerr << "error: invalid configuration (" << errors.size() << " problem(s) listed above)\n";
  std::exit(2);
}

// ---------------------------------------------------------------------------
// train / eval configuration plumbing
// ---------------------------------------------------------------------------

struct RunSpec {
  ModelConfig model;
  TrainConfig train;
  std::array<double, 3> split_ratios = {0, 0, 0};  // 0,0,0 = take manifest
  std::uint64_t split_seed = 0;
  bool split_seed_set = false;
  bool stratify = true;
};

json run_spec_to_json(const RunSpec& s) {
  json j;
  j["model"] = model_config_to_json(s.model);
  j["train"] = {{"lr", s.train.lr},
                {"optimizer", s.train.optimizer},
                {"weight_decay", s.train.weight_decay},
                {"batch_size", s.train.batch_size},
                {"max_epochs", s.train.max_epochs},
                {"early_stop_patience", s.train.early_stop_patience},
                {"scheduler",
                 {{"kind", s.train.scheduler.kind},
                  {"factor", s.train.scheduler.factor},
                  {"patience", s.train.scheduler.patience}}},
                {"loss", s.train.loss},
                {"seed", s.train.seed},
                {"dropout", s.train.dropout}};
  j["split"] = {{"ratios", s.split_ratios},
                {"seed", s.split_seed},
                {"stratify", s.stratify}};
  return j;
}

void apply_config_file(RunSpec& s, const json& j) {
  if (j.contains("model")) {
    const auto& m = j.at("model");
    ModelConfig& c = s.model;
    c.type = m.value("type", c.type);
    c.layers = m.value("layers", c.layers);
    c.hidden = m.value("hidden", c.hidden);
    c.head = m.value("head", c.head);
    c.dropout = m.value("dropout", c.dropout);
    c.bidirectional = m.value("bidirectional", c.bidirectional);
    c.leaky_slope = m.value("leaky_slope", c.leaky_slope);
    c.init_seed = m.value("init_seed", c.init_seed);
    c.feature_dim = m.value("feature_dim", c.feature_dim);
    c.num_classes = m.value("num_classes", c.num_classes);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    TrainConfig& c = s.train;
    c.lr = t.value("lr", c.lr);
    c.optimizer = t.value("optimizer", c.optimizer);
    c.weight_decay = t.value("weight_decay", c.weight_decay);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.max_epochs = t.value("max_epochs", c.max_epochs);
    c.early_stop_patience = t.value("early_stop_patience", c.early_stop_patience);
    c.loss = t.value("loss", c.loss);
    c.seed = t.value("seed", c.seed);
    c.dropout = t.value("dropout", c.dropout);
    if (t.contains("scheduler")) {
      const auto& sch = t.at("scheduler");
      c.scheduler.kind = sch.value("kind", c.scheduler.kind);
      c.scheduler.factor = sch.value("factor", c.scheduler.factor);
      c.scheduler.patience = sch.value("patience", c.scheduler.patience);
    }
  }
  if (j.contains("split")) {
    const auto& sp = j.at("split");
    if (sp.contains("ratios")) s.split_ratios = sp.at("ratios").get<std::array<double, 3>>();
    if (sp.contains("seed")) {
      s.split_seed = sp.at("seed").get<std::uint64_t>();
      s.split_seed_set = true;
    }
    s.stratify = sp.value("stratify", s.stratify);
  }
}

std::vector<std::string> validate_spec(const RunSpec& s) {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  static const std::vector<std::string> known_types{"gat",  "gatv2",     "tc",
                                                    "flowgat", "flowgatv2", "flowtc",
                                                    "dagnn",   "dvae",      "flowdagnn"};
  check(std::find(known_types.begin(), known_types.end(), s.model.type) != known_types.end(),
        "unknown model type '" + s.model.type + "'");
  check(s.model.layers >= 1, "model.layers must be >= 1");
  check(s.model.hidden >= 1, "model.hidden must be >= 1");
  check(s.model.head == "linear" || s.model.head == "mlp",
        "model.head must be 'linear' or 'mlp'");
  check(s.model.dropout >= 0 && s.model.dropout < 1, "model.dropout must be in [0,1)");
  check(s.train.lr >= 0, "train.lr must be >= 0");
  check(s.train.optimizer == "adam" || s.train.optimizer == "adamw",
        "train.optimizer must be 'adam' or 'adamw'");
  check(s.train.loss == "nll" || s.train.loss == "mse", "train.loss must be 'nll' or 'mse'");
  check(s.train.batch_size >= 1, "train.batch_size must be >= 1");
  check(s.train.max_epochs >= 1, "train.max_epochs must be >= 1");
  check(s.train.early_stop_patience >= 1, "train.early_stop_patience must be >= 1");
  check(s.train.dropout >= 0 && s.train.dropout < 1, "train.dropout must be in [0,1)");
  check(s.train.scheduler.kind == "none" || s.train.scheduler.kind == "plateau",
        "train.scheduler.kind must be 'none' or 'plateau'");
  if (s.train.scheduler.kind == "plateau")
    check(s.train.scheduler.factor > 1, "train.scheduler.factor must be > 1");
  return errors;
}

json metrics_to_json(const MetricsReport& rep) {
  json j;
  if (rep.balanced_accuracy) j["balanced_accuracy"] = *rep.balanced_accuracy;
  if (rep.macro_f1) j["macro_f1"] = *rep.macro_f1;
  if (rep.accuracy) j["accuracy"] = *rep.accuracy;
  if (rep.rmse) j["rmse"] = *rep.rmse;
  if (rep.pearson_r) j["pearson_r"] = *rep.pearson_r;
  if (rep.loss) j["loss"] = *rep.loss;
  if (rep.confusion.num_classes() > 0) {
    json cm = json::array();
    for (const auto& row : rep.confusion.counts) cm.push_back(row);
    j["confusion"] = cm;
  }
  return j;
}

void print_metrics(const std::string& tag, const MetricsReport& rep) {
  std::printf("%s:\n", tag.c_str());
  if (rep.balanced_accuracy) std::printf("  balanced accuracy  %.4f\n", *rep.balanced_accuracy);
  if (rep.macro_f1) std::printf("  macro F1           %.4f\n", *rep.macro_f1);
  if (rep.accuracy) std::printf("  accuracy           %.4f\n", *rep.accuracy);
  if (rep.rmse) std::printf("  rmse               %.6f\n", *rep.rmse);
  if (rep.pearson_r) std::printf("  pearson r          %.4f\n", *rep.pearson_r);
  if (rep.loss) std::printf("  loss               %.6f\n", *rep.loss);
  std::string line = "RESULT metrics split=" + tag;
  auto add = [&line](const char* k, const std::optional<double>& v) {
    if (v) line += std::string(" ") + k + "=" + std::to_string(*v);
  };
  add("balanced_accuracy", rep.balanced_accuracy);
  add("macro_f1", rep.macro_f1);
  add("accuracy", rep.accuracy);
  add("rmse", rep.rmse);
  add("pearson_r", rep.pearson_r);
  add("loss", rep.loss);
  std::printf("%s\n", line.c_str());
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& kind, std::size_t n, node_t max_nodes, std::uint64_t seed,
                 const std::string& out_path) {
  std::vector<std::string> errors;
  if (kind != "flow-classification" && kind != "pair-discrimination")
    errors.push_back("unknown kind '" + kind + "' (flow-classification | pair-discrimination)");
  if (n < 2) errors.push_back("--n must be >= 2");
  if (max_nodes < 4) errors.push_back("--max-nodes must be >= 4");
  if (out_path.empty()) errors.push_back("--out is required");
  if (!errors.empty()) fail_config(errors);

  OutputDir out(out_path);
  Dataset ds = kind == "flow-classification" ? gen_flow_classification(n, max_nodes, seed)
                                             : gen_pair_discrimination(n, seed, max_nodes);
  const std::string data_path = (out.dir / "data.jsonl").string();
  save_dataset(ds, data_path);

  json cfg = {{"command", "gen-data"}, {"kind", kind},   {"n", n},
              {"max_nodes", max_nodes}, {"seed", seed},   {"out", out_path}};
  out.write_json("resolved_config.json", cfg);
  out.finish();

  std::printf("wrote %zu records to %s\n", ds.size(), data_path.c_str());
  std::printf("RESULT gen-data kind=%s records=%zu path=%s\n", kind.c_str(), ds.size(),
              data_path.c_str());
  return 0;
}

Splits make_splits(const Dataset& ds, const RunSpec& spec) {
  std::array<double, 3> ratios = spec.split_ratios;
  if (ratios[0] == 0 && ratios[1] == 0 && ratios[2] == 0) ratios = ds.manifest.split_ratios;
  const std::uint64_t seed = spec.split_seed_set ? spec.split_seed : ds.manifest.seed;
  const bool stratify = spec.stratify && ds.manifest.task.kind == TaskKind::classification;
  return split(ds, ratios, seed, stratify);
}

int cmd_train(RunSpec spec, const std::string& data_path, const std::string& out_path) {
  Dataset ds = load_dataset(data_path);
  spec.model.feature_dim = ds.manifest.feature_dim;
  spec.model.num_classes =
      ds.manifest.task.kind == TaskKind::classification ? ds.manifest.task.num_classes : 0;
  if (ds.manifest.task.kind == TaskKind::regression) spec.train.loss = "mse";

  std::vector<std::string> errors = validate_spec(spec);
  if (spec.model.is_dag_model() && spec.model.hidden < spec.model.feature_dim)
    errors.push_back("model.hidden must be >= the dataset feature dimension for DAG models");
  if (out_path.empty()) errors.push_back("--out is required");
  if (!errors.empty()) fail_config(errors);

  Splits splits = make_splits(ds, spec);
  if (!spec.split_seed_set) spec.split_seed = ds.manifest.seed;
  if (spec.split_ratios[0] == 0 && spec.split_ratios[1] == 0 && spec.split_ratios[2] == 0)
    spec.split_ratios = ds.manifest.split_ratios;

  OutputDir out(out_path);
  out.write_json("resolved_config.json", run_spec_to_json(spec));

  Model model(spec.model);
  std::printf("training %s (layers=%zu hidden=%zu) on %zu/%zu/%zu records\n",
              spec.model.type.c_str(), spec.model.layers, spec.model.hidden,
              splits.train.size(), splits.val.size(), splits.test.size());
  TrainOutcome outcome = train(model, splits, spec.train);

  std::string history_lines;
  for (const HistoryRow& row : outcome.history) {
    json j = {{"epoch", row.epoch},
              {"train_loss", row.train_loss},
              {"val_metric", row.val_metric},
              {"lr", row.lr}};
    history_lines += j.dump() + "\n";
  }
  out.write_text("history.jsonl", history_lines);
  save_checkpoint(model, (out.dir / "checkpoint.json").string());

  const Dataset& test = splits.test.records.empty() ? splits.train : splits.test;
  MetricsReport test_rep = evaluate(model, test);
  json report = {{"best_epoch", outcome.best_epoch},
                 {"best_val_metric", outcome.best_val_metric},
                 {"epochs_run", outcome.history.size()},
                 {"stopped_early", outcome.stopped_early},
                 {"test", metrics_to_json(test_rep)}};
  out.write_json("report.json", report);
  out.finish();

  std::printf("finished after %zu epoch(s); best epoch %zu (val metric %.6f)\n",
              outcome.history.size(), outcome.best_epoch, outcome.best_val_metric);
  print_metrics("test", test_rep);
  std::printf("RESULT train epochs=%zu best_epoch=%zu best_val_metric=%.12g\n",
              outcome.history.size(), outcome.best_epoch, outcome.best_val_metric);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& which, std::int64_t split_seed, const std::string& out_path) {
  Model model = load_checkpoint(checkpoint);
  Dataset ds = load_dataset(data_path);

  MetricsReport rep;
  if (which == "all") {
    rep = evaluate(model, ds);
  } else {
    RunSpec spec;
    if (split_seed >= 0) {
      spec.split_seed = static_cast<std::uint64_t>(split_seed);
      spec.split_seed_set = true;
    }
    Splits splits = make_splits(ds, spec);
    const Dataset& part = which == "train" ? splits.train : which == "val" ? splits.val
                                                                           : splits.test;
    if (part.records.empty()) {
      std::cerr << "error: requested split '" << which << "' is empty\n";
      return 1;
    }
    rep = evaluate(model, part);
  }

  OutputDir out(out_path);
  out.write_json("resolved_config.json", json{{"command", "eval"},
                                              {"checkpoint", checkpoint},
                                              {"data", data_path},
                                              {"split", which},
                                              {"split_seed", split_seed}});
  out.write_json("report.json", metrics_to_json(rep));
  out.finish();
  print_metrics(which, rep);
  return 0;
}

int cmd_verify_flow(const std::string& checkpoint, const std::string& data_path,
                    std::uint64_t seed, std::size_t hidden, std::size_t layers, double tolerance,
                    const std::string& out_path) {
  Dataset ds = load_dataset(data_path);
  std::optional<Model> model;
  if (!checkpoint.empty()) {
    model.emplace(load_checkpoint(checkpoint));
    if (model->config().type != "flowdagnn") {
      std::cerr << "error: verify-flow needs a flowdagnn checkpoint\n";
      return 2;
    }
  } else {
    ModelConfig mc;
    mc.type = "flowdagnn";
    mc.layers = layers;
    mc.hidden = std::max(hidden, ds.manifest.feature_dim);
    mc.feature_dim = ds.manifest.feature_dim;
    mc.num_classes = 2;
    mc.init_seed = seed;
    model.emplace(mc);
  }

  OutputDir out(out_path);
  out.write_json("resolved_config.json",
                 json{{"command", "verify-flow"},
                      {"checkpoint", checkpoint},
                      {"data", data_path},
                      {"seed", seed},
                      {"hidden", model->config().hidden},
                      {"layers", model->config().layers},
                      {"tolerance", tolerance},
                      {"injections", "unit-per-source-split-by-beta"}});

  double max_residual = 0;
  std::string machine_lines;
  std::size_t checked = 0;
  for (const auto& rec : ds.records) {
    Dag d = to_dag(rec);
    Tape tape;
    const std::vector<EdgeWeights> betas = model->flow_weights(rec);
    for (std::size_t layer = 0; layer < betas.size(); ++layer) {
      const std::vector<real_t> beta = betas[layer].values.value();
      Flow flow = extract_flow(d, beta, default_injections(d, beta));
      KirchhoffReport krep = kirchhoff_residual(d.graph(), flow);
      max_residual = std::max(max_residual, static_cast<double>(krep.max_abs_residual));
      json line = {{"record", rec.id},
                   {"layer", layer},
                   {"max_abs_residual", krep.max_abs_residual}};
      machine_lines += "RESULT verify-flow " + line.dump() + "\n";
    }
    ++checked;
  }
  out.write_text("residuals.txt", machine_lines);
  out.finish();

  const bool ok = max_residual < tolerance;
  std::printf("checked %zu record(s) x %zu layer(s): max |residual| = %.3e (tolerance %.1e)\n",
              checked, model->config().layers, max_residual, tolerance);
  std::fputs(machine_lines.c_str(), stdout);
  std::printf("RESULT verify-flow-summary records=%zu max_abs_residual=%.12e status=%s\n",
              checked, max_residual, ok ? "pass" : "fail");
  if (!ok) std::fprintf(stderr, "error: Kirchhoff residual %.3e exceeds tolerance\n", max_residual);
  return ok ? 0 : 1;
}

int cmd_expressivity(const std::string& suite, const std::string& model_name, std::size_t n,
                     node_t max_nodes, std::size_t num_seeds, std::uint64_t seed,
                     std::size_t hidden, std::size_t layers, double threshold,
                     const std::string& out_path) {
  std::vector<std::string> errors;
  if (suite != "fig1" && suite != "family")
    errors.push_back("--suite must be 'fig1' or 'family'");
  DagModelKind kind = DagModelKind::dagnn;
  if (model_name == "dagnn")
    kind = DagModelKind::dagnn;
  else if (model_name == "dvae")
    kind = DagModelKind::dvae;
  else if (model_name == "flowdagnn")
    kind = DagModelKind::flowdagnn;
  else
    errors.push_back("--model must be dagnn, dvae or flowdagnn");
  if (!errors.empty()) fail_config(errors);

  std::vector<GraphPair> pairs;
  if (suite == "fig1") {
    pairs.push_back(gen_fig1_pair({1, 0, 0}, {0, 1, 0}, {0, 0, 1}));
  } else {
    pairs = gen_pair_family(n, max_nodes, seed);
  }

  DiscriminationReport rep =
      discrimination_report(kind, hidden, layers, pairs, num_seeds, seed + 1, threshold);

  OutputDir out(out_path);
  out.write_json("resolved_config.json", json{{"command", "expressivity"},
                                              {"suite", suite},
                                              {"model", model_name},
                                              {"n", n},
                                              {"max_nodes", max_nodes},
                                              {"seeds", num_seeds},
                                              {"seed", seed},
                                              {"hidden", hidden},
                                              {"layers", layers},
                                              {"threshold", threshold},
                                              {"virtual_node_feature", "zero"}});

  std::printf("%s on %zu pair(s), %zu seed(s), threshold %.1e\n", model_name.c_str(),
              pairs.size(), num_seeds, threshold);
  std::printf("%-6s %-14s %-14s %s\n", "pair", "mean dist", "min dist", "separated");
  std::string machine_lines;
  for (std::size_t p = 0; p < rep.pairs.size(); ++p) {
    const auto& pd = rep.pairs[p];
    std::printf("%-6zu %-14.6e %-14.6e %.2f\n", p, pd.mean_distance, pd.min_distance,
                pd.separated_fraction);
    json line = {{"pair", p},
                 {"mean_distance", pd.mean_distance},
                 {"min_distance", pd.min_distance},
                 {"separated_fraction", pd.separated_fraction}};
    machine_lines += "RESULT expressivity-pair " + line.dump() + "\n";
  }
  std::fputs(machine_lines.c_str(), stdout);
  std::printf("RESULT expressivity model=%s suite=%s separation_fraction=%.6f max_distance=%.6e\n",
              model_name.c_str(), suite.c_str(), rep.overall_separated_fraction,
              rep.max_distance);
  out.write_text("report.txt", machine_lines);
  out.write_json("report.json",
                 json{{"model", model_name},
                      {"suite", suite},
                      {"separation_fraction", rep.overall_separated_fraction},
                      {"max_distance", rep.max_distance},
                      {"threshold", rep.threshold}});
  out.finish();
  return 0;
}

int cmd_gradcheck(const std::string& model_name, double eps, std::size_t hidden,
                  std::size_t layers, std::uint64_t seed, double tolerance,
                  const std::string& out_path) {
  ModelConfig mc;
  mc.type = model_name;
  mc.layers = layers;
  mc.hidden = hidden;
  mc.feature_dim = 3;
  mc.num_classes = 2;
  mc.dropout = 0;
  mc.init_seed = seed;

  RunSpec spec;
  spec.model = mc;
  std::vector<std::string> errors = validate_spec(spec);
  if (eps <= 0) errors.push_back("--eps must be positive");
  if (!errors.empty()) fail_config(errors);

  Model model(mc);
  // Finite differences need a generic evaluation point: zero-initialized
  // biases put pre-activations exactly on the LeakyReLU kink, where the
  // two-sided difference disagrees with any one-sided derivative.
  Rng jitter(seed + 29);
  for (Tensor p : model.params())
    for (auto& v : p.mutable_value()) v += static_cast<real_t>(jitter.uniform(-0.15, 0.15));

  Rng data_rng(seed + 17);
  std::vector<GraphRecord> records;
  for (int i = 0; i < 4; ++i) {
    Dag d = random_rooted_dag(data_rng, 7, true, 3, 3);
    GraphRecord rec;
    rec.id = "g" + std::to_string(i);
    rec.directed = true;
    rec.nodes = d.features();
    rec.edges = d.edges();
    rec.sources = d.initial_nodes();
    rec.targets = d.final_nodes();
    rec.label = i % 2;
    records.push_back(std::move(rec));
  }

  // Random probe on the model output couples every live coordinate.
  Rng probe_rng(seed + 23);
  std::vector<std::vector<real_t>> probes;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Rng dummy(0);
    Tape tape;
    const std::size_t dim = model.forward(records[i], false, dummy).size();
    std::vector<real_t> pr(dim);
    for (auto& x : pr)
      x = static_cast<real_t>(probe_rng.uniform(0.5, 1.5) * (probe_rng.uniform() < 0.5 ? -1 : 1));
    probes.push_back(std::move(pr));
  }
  auto probe_loss = [&] {
    Rng dummy(0);
    Tensor total = Tensor::scalar(0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      Tensor out = model.forward(records[i], false, dummy);
      total = add(total, dot(out, Tensor::constant({out.size()}, probes[i])));
    }
    return total;
  };

  const double err = grad_check(probe_loss, model.live_params(), eps);

  // The structurally dead attention vectors must have zero gradient.
  double dead_max = 0;
  const std::vector<Tensor> dead = model.shift_invariant_params();
  if (!dead.empty()) {
    zero_grad(model.params());
    {
      Tape tape;
      backward(probe_loss());
    }
    for (const Tensor& p : dead)
      for (real_t g : p.grad()) dead_max = std::max(dead_max, std::abs(static_cast<double>(g)));
  }

  const bool ok = err < tolerance && dead_max < 1e-12;
  std::printf("%-12s %-18s %s\n", "model", "max rel error", "status");
  std::printf("%-12s %-18.6e %s\n", model_name.c_str(), err, ok ? "pass" : "FAIL");
  if (!dead.empty())
    std::printf("shift-invariant attention vectors: max |grad| = %.3e (must be ~0)\n", dead_max);
  std::printf("RESULT gradcheck model=%s eps=%g max_rel_error=%.12e tolerance=%g status=%s\n",
              model_name.c_str(), eps, err, tolerance, ok ? "pass" : "fail");

  OutputDir out(out_path);
  out.write_json("resolved_config.json", json{{"command", "gradcheck"},
                                              {"model", model_name},
                                              {"eps", eps},
                                              {"hidden", hidden},
                                              {"layers", layers},
                                              {"seed", seed},
                                              {"tolerance", tolerance}});
  out.write_json("report.json", json{{"model", model_name},
                                     {"max_rel_error", err},
                                     {"dead_param_max_grad", dead_max},
                                     {"status", ok ? "pass" : "fail"}});
  out.finish();
  if (!ok) std::fprintf(stderr, "error: gradient check failed (max rel error %.3e)\n", err);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-attentional graph neural networks"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_kind = "flow-classification", gen_out;
  std::size_t gen_n = 500;
  node_t gen_max_nodes = 12;
  std::uint64_t gen_seed = 1;
  gen->add_option("--kind", gen_kind, "flow-classification | pair-discrimination");
  gen->add_option("--n", gen_n, "number of samples (pairs for pair-discrimination)");
  gen->add_option("--max-nodes", gen_max_nodes, "maximum nodes per graph");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_out, tr_model, tr_optimizer, tr_loss, tr_sched, tr_head;
  double tr_lr = -1, tr_wd = -1, tr_dropout = -1, tr_sched_factor = -1;
  std::int64_t tr_batch = -1, tr_epochs = -1, tr_patience = -1, tr_layers = -1, tr_hidden = -1,
               tr_seed = -1, tr_init_seed = -1, tr_sched_patience = -1, tr_split_seed = -1;
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--data", tr_data, "dataset path (.jsonl)")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--model", tr_model, "model type");
  tr->add_option("--layers", tr_layers, "message-passing / encoder layers");
  tr->add_option("--hidden", tr_hidden, "hidden dimension");
  tr->add_option("--head", tr_head, "prediction head: linear | mlp");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--optimizer", tr_optimizer, "adam | adamw");
  tr->add_option("--weight-decay", tr_wd, "weight decay");
  tr->add_option("--batch-size", tr_batch, "batch size");
  tr->add_option("--max-epochs", tr_epochs, "maximum epochs");
  tr->add_option("--patience", tr_patience, "early stopping patience");
  tr->add_option("--scheduler", tr_sched, "none | plateau");
  tr->add_option("--scheduler-factor", tr_sched_factor, "plateau reduction factor");
  tr->add_option("--scheduler-patience", tr_sched_patience, "plateau patience");
  tr->add_option("--loss", tr_loss, "nll | mse");
  tr->add_option("--dropout", tr_dropout, "dropout rate");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--init-seed", tr_init_seed, "parameter initialization seed");
  tr->add_option("--split-seed", tr_split_seed, "split seed (defaults to manifest)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ck, ev_data, ev_split = "test", ev_out;
  std::int64_t ev_split_seed = -1;
  ev->add_option("--checkpoint", ev_ck, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset path")->required();
  ev->add_option("--split", ev_split, "train | val | test | all");
  ev->add_option("--split-seed", ev_split_seed, "split seed (defaults to manifest)");
  ev->add_option("--out", ev_out, "output directory");

  // verify-flow
  auto* vf = app.add_subcommand("verify-flow", "check Kirchhoff conservation of flow weights");
  std::string vf_ck, vf_data, vf_out;
  std::uint64_t vf_seed = 1;
  std::size_t vf_hidden = 8, vf_layers = 2;
  double vf_tol = 1e-9;
  vf->add_option("--checkpoint", vf_ck, "flowdagnn checkpoint (omit for random parameters)");
  vf->add_option("--data", vf_data, "dataset path")->required();
  vf->add_option("--seed", vf_seed, "random-parameter seed");
  vf->add_option("--hidden", vf_hidden, "hidden dimension for random parameters");
  vf->add_option("--layers", vf_layers, "layers for random parameters");
  vf->add_option("--tolerance", vf_tol, "max residual tolerance");
  vf->add_option("--out", vf_out, "output directory");

  // expressivity
  auto* ex = app.add_subcommand("expressivity", "run discrimination experiments");
  std::string ex_suite = "family", ex_model = "flowdagnn", ex_out;
  std::size_t ex_n = 50, ex_seeds = 5, ex_hidden = 8, ex_layers = 2;
  node_t ex_max_nodes = 10;
  std::uint64_t ex_seed = 1;
  double ex_threshold = 1e-6;
  ex->add_option("--suite", ex_suite, "fig1 | family");
  ex->add_option("--model", ex_model, "dagnn | dvae | flowdagnn");
  ex->add_option("--n", ex_n, "number of generated pairs (family suite)");
  ex->add_option("--max-nodes", ex_max_nodes, "max nodes per generated DAG");
  ex->add_option("--seeds", ex_seeds, "number of parameter seeds");
  ex->add_option("--seed", ex_seed, "base seed");
  ex->add_option("--hidden", ex_hidden, "hidden dimension");
  ex->add_option("--layers", ex_layers, "encoder layers");
  ex->add_option("--threshold", ex_threshold, "separation threshold");
  ex->add_option("--out", ex_out, "output directory");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_model = "flowgat", gc_out;
  double gc_eps = 1e-6, gc_tol = 1e-5;
  std::size_t gc_hidden = 4, gc_layers = 2;
  std::uint64_t gc_seed = 1;
  gc->add_option("--model", gc_model, "model type");
  gc->add_option("--eps", gc_eps, "central difference step");
  gc->add_option("--tolerance", gc_tol, "max relative error tolerance");
  gc->add_option("--hidden", gc_hidden, "hidden dimension");
  gc->add_option("--layers", gc_layers, "layers");
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--out", gc_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_kind, gen_n, gen_max_nodes, gen_seed, gen_out);

    if (tr->parsed()) {
      RunSpec spec;
      if (!tr_config.empty()) apply_config_file(spec, load_json_file(tr_config));
      if (!tr_model.empty()) spec.model.type = tr_model;
      if (tr_layers >= 0) spec.model.layers = static_cast<std::size_t>(tr_layers);
      if (tr_hidden >= 0) spec.model.hidden = static_cast<std::size_t>(tr_hidden);
      if (!tr_head.empty()) spec.model.head = tr_head;
      if (tr_init_seed >= 0) spec.model.init_seed = static_cast<std::uint64_t>(tr_init_seed);
      if (tr_lr >= 0) spec.train.lr = tr_lr;
      if (!tr_optimizer.empty()) spec.train.optimizer = tr_optimizer;
      if (tr_wd >= 0) spec.train.weight_decay = tr_wd;
      if (tr_batch >= 0) spec.train.batch_size = static_cast<std::size_t>(tr_batch);
      if (tr_epochs >= 0) spec.train.max_epochs = static_cast<std::size_t>(tr_epochs);
      if (tr_patience >= 0) spec.train.early_stop_patience = static_cast<std::size_t>(tr_patience);
      if (!tr_sched.empty()) spec.train.scheduler.kind = tr_sched;
      if (tr_sched_factor >= 0) spec.train.scheduler.factor = tr_sched_factor;
      if (tr_sched_patience >= 0)
        spec.train.scheduler.patience = static_cast<std::size_t>(tr_sched_patience);
      if (!tr_loss.empty()) spec.train.loss = tr_loss;
      if (tr_dropout >= 0) {
        spec.train.dropout = static_cast<real_t>(tr_dropout);
        spec.model.dropout = static_cast<real_t>(tr_dropout);
      }
      if (tr_seed >= 0) spec.train.seed = static_cast<std::uint64_t>(tr_seed);
      if (tr_split_seed >= 0) {
        spec.split_seed = static_cast<std::uint64_t>(tr_split_seed);
        spec.split_seed_set = true;
      }
      return cmd_train(spec, tr_data, tr_out);
    }

    if (ev->parsed()) {
      if (ev_split != "train" && ev_split != "val" && ev_split != "test" && ev_split != "all")
        fail_config({"--split must be train, val, test or all"});
      return cmd_eval(ev_ck, ev_data, ev_split, ev_split_seed, ev_out);
    }

    if (vf->parsed())
      return cmd_verify_flow(vf_ck, vf_data, vf_seed, vf_hidden, vf_layers, vf_tol, vf_out);

    if (ex->parsed())
      return cmd_expressivity(ex_suite, ex_model, ex_n, ex_max_nodes, ex_seeds, ex_seed,
                              ex_hidden, ex_layers, ex_threshold, ex_out);

    if (gc->parsed())
      return cmd_gradcheck(gc_model, gc_eps, gc_hidden, gc_layers, gc_seed, gc_tol, gc_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
