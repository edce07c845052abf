#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowgnn/data.hpp"
#include "flowgnn/expressivity.hpp"
#include "helpers.hpp"

using namespace flowgnn;
using Catch::Approx;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("data_io_test_") + name + ".jsonl";
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void cleanup(const std::string& path) {
  std::remove(path.c_str());
  std::remove((path + ".manifest.json").c_str());
}

GraphRecord random_record(Rng& rng, std::size_t idx) {
  Dag d = random_rooted_dag(rng, 8, false, 3, 3);
  GraphRecord rec;
  rec.id = "r" + std::to_string(idx);
  rec.directed = rng.uniform() < 0.7;
  rec.nodes = d.features();
  for (auto& x : rec.nodes.data) x = static_cast<real_t>(rng.uniform(-2, 2));
  rec.edges = d.edges();
  rec.sources = d.initial_nodes();
  rec.targets = d.final_nodes();
  rec.label = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return rec;
}

}  // namespace

TEST_CASE("dataset round trips") {
  const std::string path = tmp_path("roundtrip");

  SECTION("empty dataset") {
    Dataset ds;
    ds.manifest.feature_dim = 3;
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    CHECK(back.records.empty());
    CHECK(back.manifest.feature_dim == 3);
  }

  SECTION("single record") {
    Dataset ds;
    ds.manifest.feature_dim = 3;
    Rng rng(1);
    ds.records.push_back(random_record(rng, 0));
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    REQUIRE(back.records.size() == 1);
    CHECK(back.records[0].id == ds.records[0].id);
    CHECK(back.records[0].edges == ds.records[0].edges);
    CHECK(back.records[0].nodes == ds.records[0].nodes);
    CHECK(back.records[0].label == ds.records[0].label);
  }

  SECTION("save-load-save is byte identical for 1000 random records") {
    Dataset ds;
    ds.manifest.feature_dim = 3;
    Rng rng(2);
    for (std::size_t i = 0; i < 1000; ++i) ds.records.push_back(random_record(rng, i));
    save_dataset(ds, path);
    const std::string bytes1 = file_bytes(path);
    Dataset back = load_dataset(path);
    save_dataset(back, path);
    CHECK(file_bytes(path) == bytes1);
  }

  cleanup(path);
}

TEST_CASE("load reports the offending line") {
  const std::string path = tmp_path("badline");
  {
    Dataset ds;
    ds.manifest.feature_dim = 1;
    save_dataset(ds, path);
    std::ofstream out(path, std::ios::app);
    out << "{\"id\": \"ok\", \"directed\": true, \"nodes\": [[1.0]], \"edges\": [], "
           "\"sources\": [0], \"targets\": [0], \"label\": 0}\n";
    out << "{this is not json}\n";
  }
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  cleanup(path);
}

TEST_CASE("undirected records double their edges at graph construction") {
  GraphRecord rec;
  rec.id = "u";
  rec.directed = false;
  rec.nodes = helpers::feature_matrix({{1}, {2}});
  rec.edges = {{0, 1}};
  Graph g = to_graph(rec);
  CHECK(g.num_edges() == 2);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 0));
}

TEST_CASE("split") {
  Dataset ds;
  ds.manifest.task = TaskSpec{TaskKind::classification, 2};
  ds.manifest.feature_dim = 1;
  for (int i = 0; i < 100; ++i) {
    GraphRecord rec;
    rec.id = std::to_string(i);
    rec.nodes = helpers::feature_matrix({{static_cast<real_t>(i)}});
    rec.label = i < 80 ? 0.0 : 1.0;  // 4:1 imbalance
    ds.records.push_back(rec);
  }

  SECTION("ratios (1,0,0) put everything in train") {
    Splits s = split(ds, {1, 0, 0}, 3);
    CHECK(s.train.size() == 100);
    CHECK(s.val.size() == 0);
    CHECK(s.test.size() == 0);
  }

  SECTION("a fixed seed reproduces the split") {
    Splits a = split(ds, {0.8, 0.1, 0.1}, 7);
    Splits b = split(ds, {0.8, 0.1, 0.1}, 7);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i)
      CHECK(a.train.records[i].id == b.train.records[i].id);
  }

  SECTION("stratified splits preserve class counts") {
    Splits s = split(ds, {0.8, 0.1, 0.1}, 7, /*stratify=*/true);
    auto count = [](const Dataset& d, double cls) {
      std::size_t n = 0;
      for (const auto& r : d.records)
        if (r.label == cls) ++n;
      return n;
    };
    CHECK(count(s.train, 0.0) == 64);
    CHECK(count(s.train, 1.0) == 16);
    CHECK(count(s.val, 0.0) == 8);
    CHECK(count(s.val, 1.0) == 2);
    CHECK(count(s.test, 0.0) == 8);
    CHECK(count(s.test, 1.0) == 2);
  }

  SECTION("invalid ratios and undersized datasets are rejected") {
    CHECK_THROWS_AS(split(ds, {0.5, 0.2, 0.2}, 1), std::invalid_argument);
    Dataset tiny;
    tiny.manifest = ds.manifest;
    tiny.records.push_back(ds.records[0]);
    CHECK_THROWS_AS(split(tiny, {0.34, 0.33, 0.33}, 1), std::invalid_argument);
  }
}

TEST_CASE("gen_flow_classification") {
  Dataset ds = gen_flow_classification(200, 10, 17);
  REQUIRE(ds.size() == 200);
  CHECK(ds.manifest.task.kind == TaskKind::classification);
  CHECK(ds.manifest.feature_dim == 3);

  SECTION("labels are balanced to within two percent") {
    std::size_t ones = 0;
    for (const auto& r : ds.records) ones += r.label == 1.0 ? 1 : 0;
    const double frac = static_cast<double>(ones) / 200.0;
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
  }

  SECTION("every record is a valid DAG") {
    for (const auto& r : ds.records) {
      Dag d = to_dag(r);  // throws if cyclic or malformed
      CHECK(d.num_nodes() >= 4);
      CHECK(!d.initial_nodes().empty());
      CHECK(!d.final_nodes().empty());
    }
  }

  SECTION("generation is deterministic under the seed") {
    Dataset again = gen_flow_classification(200, 10, 17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      REQUIRE(ds.records[i].edges == again.records[i].edges);
      REQUIRE(ds.records[i].nodes == again.records[i].nodes);
      REQUIRE(ds.records[i].label == again.records[i].label);
    }
  }
}

TEST_CASE("gen_pair_discrimination") {
  CHECK_THROWS_AS(gen_pair_discrimination(1, 1), std::invalid_argument);

  Dataset ds = gen_pair_discrimination(2, 5);
  CHECK(ds.size() == 4);

  Dataset big = gen_pair_discrimination(20, 5);
  REQUIRE(big.size() == 40);

  SECTION("labels are balanced exactly and pairs share a computation tree") {
    std::size_t ones = 0;
    for (const auto& r : big.records) ones += r.label == 1.0 ? 1 : 0;
    CHECK(ones == 20);
    for (std::size_t i = 0; i < big.size(); i += 2) {
      Dag d = to_dag(big.records[i]);
      Dag t = to_dag(big.records[i + 1]);
      REQUIRE(big.records[i].label == 0.0);
      REQUIRE(big.records[i + 1].label == 1.0);
      REQUIRE(trees_isomorphic(computation_tree(d), t));
    }
  }
}
