#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowgnn/dag_models.hpp"
#include "flowgnn/expressivity.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace flowgnn;
using Catch::Approx;

namespace {

Dag single_node(std::size_t rho) {
  Matrix f(1, rho);
  for (std::size_t c = 0; c < rho; ++c) f(0, c) = static_cast<real_t>(c) + 0.5;
  return Dag(Graph(1, {}, f, {0}, {0}), {0});
}

double max_abs_diff(const std::vector<real_t>& a, const oracles::Vec& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("dagnn_layer") {
  const std::size_t H = 3;
  Rng rng(2);
  DagnnLayerParams p = init_dagnn_layer(H, rng);
  oracles::GruWeights gru_w = helpers::to_gru_weights(p.gru);

  SECTION("a single node aggregates the zero message") {
    Dag d = single_node(H);
    Tape tape;
    Tensor out = dagnn_layer(d, input_states(d, H), p);
    const oracles::Vec expect = oracles::gru({0.5, 1.5, 2.5}, {0, 0, 0}, gru_w);
    CHECK(max_abs_diff(out.value(), expect) < 1e-12);
  }

  SECTION("a single predecessor gets attention weight 1") {
    Dag d = helpers::chain(2);
    Tape tape;
    Tensor H0 = input_states(d, H);
    Tensor out = dagnn_layer(d, H0, p);
    const oracles::Vec h0{1, 0, 0}, h1{2, 0, 0};
    const oracles::Vec s0 = oracles::gru(h0, {0, 0, 0}, gru_w);
    const oracles::Vec s1 = oracles::gru(h1, s0, gru_w);  // m_1 = h'_0
    CHECK(max_abs_diff(out.value(), oracles::Vec{s0[0], s0[1], s0[2], s1[0], s1[1], s1[2]}) <
          1e-12);
  }

  SECTION("diamond matches the straight-line oracle") {
    Dag d = helpers::diamond(2);
    Tape tape;
    Tensor H0 = input_states(d, H);
    Tensor out = dagnn_layer(d, H0, p);
    const oracles::Mat expect =
        oracles::dagnn_layer(d, helpers::rows_of(H0), helpers::to_vec(p.w1),
                             helpers::to_vec(p.w2), gru_w);
    for (std::size_t v = 0; v < 4; ++v)
      for (std::size_t c = 0; c < H; ++c)
        REQUIRE(out.value()[v * H + c] == Approx(expect[v][c]).margin(1e-11));
  }
}

TEST_CASE("dvae_layer") {
  const std::size_t H = 3;
  Rng rng(3);
  DvaeLayerParams p = init_dvae_layer(H, rng);

  SECTION("single node") {
    Dag d = single_node(H);
    Tape tape;
    Tensor out = dvae_layer(d, input_states(d, H), p);
    const oracles::Vec expect =
        oracles::gru({0.5, 1.5, 2.5}, {0, 0, 0}, helpers::to_gru_weights(p.gru));
    CHECK(max_abs_diff(out.value(), expect) < 1e-12);
  }

  SECTION("saturated gate with identity mapping forwards the predecessor state") {
    DvaeLayerParams sat = init_dvae_layer(H, rng);
    sat.g_W = Tensor::param({H, H}, std::vector<real_t>(H * H, 0));
    sat.g_b = Tensor::param({H}, std::vector<real_t>(H, 50));  // sigmoid ~= 1
    std::vector<real_t> eye(H * H, 0);
    for (std::size_t i = 0; i < H; ++i) eye[i * H + i] = 1;
    sat.m_W = Tensor::param({H, H}, eye);
    sat.m_b = Tensor::param({H}, std::vector<real_t>(H, 0));

    Dag d = helpers::chain(2);
    Tape tape;
    Tensor out = dvae_layer(d, input_states(d, H), sat);
    oracles::GruWeights gw = helpers::to_gru_weights(sat.gru);
    const oracles::Vec s0 = oracles::gru({1, 0, 0}, {0, 0, 0}, gw);
    const oracles::Vec s1 = oracles::gru({2, 0, 0}, s0, gw);  // m_1 ~= h'_0
    for (std::size_t c = 0; c < H; ++c)
      CHECK(out.value()[H + c] == Approx(s1[c]).margin(1e-9));
  }

  SECTION("random 5-node DAG matches the straight-line oracle") {
    Rng g_rng(77);
    Dag d = random_rooted_dag(g_rng, 5, false, 3, H);
    Tape tape;
    Tensor H0 = input_states(d, H);
    Tensor out = dvae_layer(d, H0, p);
    oracles::DvaeWeights w;
    w.g_W = helpers::to_mat(p.g_W);
    w.g_b = helpers::to_vec(p.g_b);
    w.m_W = helpers::to_mat(p.m_W);
    w.m_b = helpers::to_vec(p.m_b);
    w.gru = helpers::to_gru_weights(p.gru);
    const oracles::Mat expect = oracles::dvae_layer(d, helpers::rows_of(H0), w);
    for (node_t v = 0; v < d.num_nodes(); ++v)
      for (std::size_t c = 0; c < H; ++c)
        REQUIRE(out.value()[static_cast<std::size_t>(v) * H + c] ==
                Approx(expect[static_cast<std::size_t>(v)][c]).margin(1e-11));
  }
}

TEST_CASE("flowdagnn_layer") {
  const std::size_t H = 3;
  Rng rng(5);
  FlowDagnnLayerParams p = init_flowdagnn_layer(H, rng);

  SECTION("single node composes the two GRUs") {
    Dag d = single_node(H);
    Tape tape;
    FlowDagnnLayerResult r = flowdagnn_layer(d, input_states(d, H), p);
    oracles::Vec h{0.5, 1.5, 2.5}, zero{0, 0, 0};
    const oracles::Vec rv = oracles::gru(h, zero, helpers::to_gru_weights(p.rv.gru));
    const oracles::Vec fw = oracles::gru(rv, zero, helpers::to_gru_weights(p.fw.gru));
    CHECK(max_abs_diff(r.h_rv.value(), rv) < 1e-12);
    CHECK(max_abs_diff(r.h_fw.value(), fw) < 1e-12);
    CHECK(r.betas.values.size() == 0);
  }

  SECTION("rooted trees give beta = 1 exactly") {
    Rng tree_rng(31);
    for (int it = 0; it < 25; ++it) {
      Dag t = random_rooted_tree(tree_rng, 9, 3, H);
      Tape tape;
      FlowDagnnLayerResult r = flowdagnn_layer(t, input_states(t, H), p);
      for (real_t b : r.betas.values.value()) REQUIRE(b == 1.0);
    }
  }

  SECTION("random DAG matches the straight-line oracle") {
    Rng g_rng(91);
    Dag d = random_rooted_dag(g_rng, 7, true, 3, H);
    Tape tape;
    Tensor H0 = input_states(d, H);
    FlowDagnnLayerResult r = flowdagnn_layer(d, H0, p);

    oracles::FlowDagnnWeights w;
    w.w1_rv = helpers::to_vec(p.rv.w1);
    w.w2_rv = helpers::to_vec(p.rv.w2);
    w.w1_fw = helpers::to_vec(p.fw.w1);
    w.w2_fw = helpers::to_vec(p.fw.w2);
    w.gru_rv = helpers::to_gru_weights(p.rv.gru);
    w.gru_fw = helpers::to_gru_weights(p.fw.gru);
    const oracles::FlowDagnnOut expect = oracles::flowdagnn_layer(d, helpers::rows_of(H0), w);

    for (node_t v = 0; v < d.num_nodes(); ++v)
      for (std::size_t c = 0; c < H; ++c) {
        REQUIRE(r.h_rv.value()[static_cast<std::size_t>(v) * H + c] ==
                Approx(expect.h_rv[static_cast<std::size_t>(v)][c]).margin(1e-10));
        REQUIRE(r.h_fw.value()[static_cast<std::size_t>(v) * H + c] ==
                Approx(expect.h_fw[static_cast<std::size_t>(v)][c]).margin(1e-10));
      }
    for (std::size_t e = 0; e < d.edges().size(); ++e)
      REQUIRE(r.betas.values.value()[e] == Approx(expect.beta.at(d.edges()[e])).margin(1e-10));
  }

  SECTION("beta weights are flow-normalized") {
    Rng g_rng(92);
    for (int it = 0; it < 50; ++it) {
      Dag d = random_rooted_dag(g_rng, 8, true, 3, H);
      Tape tape;
      FlowDagnnLayerResult r = flowdagnn_layer(d, input_states(d, H), p);
      for (node_t v = 0; v < d.num_nodes(); ++v) {
        if (d.graph().out_degree(v) == 0) continue;
        real_t s = 0;
        for (node_t u : d.graph().out_neighbors(v))
          s += r.betas.values.value()[d.graph().edge_index(v, u)];
        REQUIRE(std::abs(s - 1) < 1e-9);
      }
    }
  }
}

TEST_CASE("readout_flowdagnn assembles pooled cross-layer stacks") {
  const std::size_t H = 2;

  SECTION("single node concatenates its reverse and forward stacks") {
    Dag d = single_node(H);
    Rng rng(7);
    FlowDagnnLayerParams p = init_flowdagnn_layer(H, rng);
    Tape tape;
    Tensor H0 = input_states(d, H);
    FlowDagnnLayerResult r = flowdagnn_layer(d, H0, p);
    Tensor emb = readout_flowdagnn(H0, {r}, d);
    REQUIRE(emb.size() == 2 * 2 * H);
    // [x, h_rv] then [x, h_fw]
    CHECK(emb.value()[0] == H0.value()[0]);
    CHECK(emb.value()[1] == H0.value()[1]);
    CHECK(emb.value()[2] == r.h_rv.value()[0]);
    CHECK(emb.value()[4] == H0.value()[0]);
    CHECK(emb.value()[6] == r.h_fw.value()[0]);
  }

  SECTION("max pooling takes the elementwise maximum over the node set") {
    // two initial nodes with states [1,0] and [0,1] at every level
    Matrix f(3, 2);
    f(0, 0) = 1;
    f(1, 1) = 1;
    Dag d = make_dag(3, {{0, 2}, {1, 2}}, f);
    Tape tape;
    Tensor H0 = input_states(d, 2);
    std::vector<Tensor> states = {H0, H0};  // pretend one layer that kept the input
    Tensor pooled = flowgnn::detail::pooled_stack(states, d.initial_nodes());
    CHECK(pooled.value() == std::vector<real_t>{1, 1, 1, 1});
  }

  SECTION("two-layer diamond matches hand assembly from layer results") {
    Dag d = helpers::diamond(2);
    Rng rng(9);
    FlowDagnnLayerParams p1 = init_flowdagnn_layer(2, rng);
    FlowDagnnLayerParams p2 = init_flowdagnn_layer(2, rng);
    Tape tape;
    Tensor H0 = input_states(d, 2);
    FlowDagnnLayerResult r1 = flowdagnn_layer(d, H0, p1);
    FlowDagnnLayerResult r2 = flowdagnn_layer(d, r1.h_fw, p2);
    Tensor emb = readout_flowdagnn(H0, {r1, r2}, d);

    // initial node 0, final node 3; stacks are [l0, l1, l2]
    std::vector<real_t> expect;
    for (const Tensor* t : {&H0, &r1.h_rv, &r2.h_rv})
      for (std::size_t c = 0; c < 2; ++c) expect.push_back(t->value()[0 * 2 + c]);
    for (const Tensor* t : {&H0, &r1.h_fw, &r2.h_fw})
      for (std::size_t c = 0; c < 2; ++c) expect.push_back(t->value()[3 * 2 + c]);
    CHECK(emb.value() == expect);
  }
}

TEST_CASE("readout_dagnn") {
  const std::size_t H = 2;
  Rng rng(11);

  SECTION("single final node, one layer") {
    Dag d = helpers::chain(3);
    DagnnLayerParams p = init_dagnn_layer(H, rng);
    Tape tape;
    Tensor H0 = input_states(d, H);
    Tensor H1 = dagnn_layer(d, H0, p);
    Tensor emb = readout_dagnn({H0, H1}, d);
    REQUIRE(emb.size() == 2 * H);
    for (std::size_t c = 0; c < H; ++c) {
      CHECK(emb.value()[c] == H0.value()[2 * H + c]);
      CHECK(emb.value()[H + c] == H1.value()[2 * H + c]);
    }
  }

  SECTION("identical final nodes pool to the same value as one") {
    Matrix f(3, 1);
    f(0, 0) = 1;
    f(1, 0) = 5;
    f(2, 0) = 5;
    Dag d = make_dag(3, {{0, 1}, {0, 2}}, f);
    Tape tape;
    Tensor H0 = input_states(d, 1);
    Tensor pooled = flowgnn::detail::pooled_stack({H0}, d.final_nodes());
    CHECK(pooled.value() == std::vector<real_t>{5});
  }

  SECTION("bidirectional readout matches hand assembly on a chain") {
    Dag d = helpers::chain(3);
    DagEncoder enc = init_dag_encoder(DagModelKind::dagnn, H, 1, rng, /*bidirectional=*/true);
    Tape tape;
    Tensor H0 = input_states(d, H);
    Tensor fw = dagnn_layer(d, H0, enc.dagnn_layers[0]);
    Dag rd = reverse(d);
    Tensor rv = dagnn_layer(rd, input_states(rd, H), enc.dagnn_layers_rv[0]);
    // pool rv stack over initial nodes {0}, fw stack over final nodes {2}
    std::vector<real_t> cat;
    for (std::size_t c = 0; c < H; ++c) cat.push_back(H0.value()[c]);
    for (std::size_t c = 0; c < H; ++c) cat.push_back(rv.value()[c]);
    for (std::size_t c = 0; c < H; ++c) cat.push_back(H0.value()[2 * H + c]);
    for (std::size_t c = 0; c < H; ++c) cat.push_back(fw.value()[2 * H + c]);
    Tensor expected = linear(Tensor::constant({cat.size()}, cat), enc.fc_W, enc.fc_b);
    Tensor emb = encode(enc, d).embedding;
    REQUIRE(emb.size() == expected.size());
    for (std::size_t i = 0; i < emb.size(); ++i)
      CHECK(emb.value()[i] == Approx(expected.value()[i]).margin(1e-12));
  }
}

TEST_CASE("encode is permutation invariant and deterministic") {
  Rng rng(13);
  for (DagModelKind kind : {DagModelKind::dagnn, DagModelKind::dvae, DagModelKind::flowdagnn}) {
    DagEncoder enc = init_dag_encoder(kind, 4, 2, rng, false);
    Rng g_rng(17);
    Dag d = random_rooted_dag(g_rng, 7, true, 3, 3);

    // relabel nodes by a permutation
    std::vector<node_t> perm(static_cast<std::size_t>(d.num_nodes()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<node_t>(i);
    g_rng.shuffle(perm);
    std::vector<Edge> pedges;
    for (const Edge& e : d.edges())
      pedges.emplace_back(perm[static_cast<std::size_t>(e.first)],
                          perm[static_cast<std::size_t>(e.second)]);
    Matrix pfeat(d.features().rows, d.features().cols);
    for (node_t v = 0; v < d.num_nodes(); ++v)
      pfeat.set_row(static_cast<std::size_t>(perm[static_cast<std::size_t>(v)]),
                    d.features().row(static_cast<std::size_t>(v)));
    Dag pd = make_dag(d.num_nodes(), std::move(pedges), std::move(pfeat));

    Tape tape;
    Tensor e1 = encode(enc, d).embedding;
    Tensor e2 = encode(enc, pd).embedding;
    Tensor e1_again = encode(enc, d).embedding;
    INFO(to_string(kind));
    for (std::size_t i = 0; i < e1.size(); ++i) {
      REQUIRE(std::abs(e1.value()[i] - e2.value()[i]) < 1e-9);
      REQUIRE(e1.value()[i] == e1_again.value()[i]);  // bitwise repeatable
    }
  }
}

TEST_CASE("Corollary 1: standard encoders cannot tell a DAG from its computation tree") {
  Rng g_rng(19);
  for (int it = 0; it < 10; ++it) {
    Dag d = random_rooted_dag(g_rng, 8, true, 3, 3);
    Dag t = computation_tree(d);
    for (DagModelKind kind : {DagModelKind::dagnn, DagModelKind::dvae}) {
      Rng rng(100 + static_cast<std::uint64_t>(it));
      DagEncoder enc = init_dag_encoder(kind, 4, 2, rng, /*bidirectional=*/false);
      Tape tape;
      const double dist =
          embedding_distance(encode(enc, d).embedding, encode(enc, t).embedding);
      INFO(to_string(kind) << " iteration " << it);
      REQUIRE(dist < 1e-7);
    }
  }
}

TEST_CASE("Theorem 1: FlowDAGNN separates a DAG from its computation tree") {
  Rng g_rng(23);
  for (int it = 0; it < 10; ++it) {
    Dag d = random_rooted_dag(g_rng, 8, true, 3, 3);
    Dag t = computation_tree(d);
    Rng rng(200 + static_cast<std::uint64_t>(it));
    DagEncoder enc = init_dag_encoder(DagModelKind::flowdagnn, 4, 2, rng);
    Tape tape;
    const double dist = embedding_distance(encode(enc, d).embedding, encode(enc, t).embedding);
    REQUIRE(dist > 1e-6);
  }
}

TEST_CASE("encoder gradients pass grad_check") {
  // Linear probe over a couple of graphs: couples every parameter
  // coordinate, so finite-difference noise on near-dead coordinates does
  // not dominate the relative error.
  Rng g_rng(31);
  std::vector<Dag> graphs;
  for (int i = 0; i < 4; ++i) graphs.push_back(random_rooted_dag(g_rng, 7, true, 3, 3));

  Rng rng(29);
  for (DagModelKind kind : {DagModelKind::dagnn, DagModelKind::dvae, DagModelKind::flowdagnn}) {
    DagEncoder enc = init_dag_encoder(kind, 3, 1, rng, false);
    std::vector<std::vector<real_t>> probes;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      Tape tape;
      const std::size_t dim = encode(enc, graphs[i]).embedding.size();
      std::vector<real_t> pr(dim);
      for (auto& x : pr)
        x = static_cast<real_t>(rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1));
      probes.push_back(std::move(pr));
    }
    auto f = [&] {
      Tensor total = Tensor::scalar(0);
      for (std::size_t i = 0; i < graphs.size(); ++i) {
        Tensor emb = encode(enc, graphs[i]).embedding;
        total = add(total, dot(emb, Tensor::constant({emb.size()}, probes[i])));
      }
      return total;
    };
    INFO(to_string(kind));
    CHECK(grad_check(f, dag_encoder_live_params(enc)) < 1e-5);

    // the shift-invariant attention vectors really do have zero gradient
    std::vector<Tensor> dead = dag_encoder_shift_invariant_params(enc);
    if (!dead.empty()) {
      zero_grad(dag_encoder_params(enc));
      {
        Tape tape;
        backward(f());
      }
      for (const Tensor& p : dead)
        for (real_t g : p.grad()) REQUIRE(std::abs(g) < 1e-12);
    }
  }
}
